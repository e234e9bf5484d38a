import os
from dotenv import load_dotenv

load_dotenv()

class Settings:
    # Project Settings
    PROJECT_NAME: str = "boostkit"
    VERSION: str = "1.0.0"
    LOG_LEVEL: str = os.getenv("BOOSTKIT_LOG_LEVEL", "INFO")

    # Execution Settings
    THREADS: int = int(os.getenv("BOOSTKIT_THREADS", "1"))
    SEED: int = int(os.getenv("BOOSTKIT_SEED", "20130101"))
    RNG_ALGORITHM: str = "numpy.PCG64"

    # Boosting Defaults
    DEFAULT_MSTOP: int = 100
    DEFAULT_STEP_LENGTH: float = 0.1
    DEFAULT_DF: float = 4.0
    DEFAULT_INNER_KNOTS: int = 20
    DEFAULT_DEGREE: int = 3
    DEFAULT_DIFF_ORDER: int = 2
    DEFAULT_BOOTSTRAP: int = 25
    DEFAULT_NU: float = 0.1

    # Persistence Settings
    MODEL_FORMAT_VERSION: int = 1
    BODYFAT_CSV = os.getenv("BOOSTKIT_BODYFAT_CSV")

settings = Settings()
