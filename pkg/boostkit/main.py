import logging

from config import settings
from boostkit.api.commands import app

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main():
    logger.debug(f"Starting {settings.PROJECT_NAME} {settings.VERSION}")
    app(prog_name=settings.PROJECT_NAME)


if __name__ == "__main__":
    main()
