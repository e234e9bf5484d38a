"""Cross-check against the published bodyfat results.

Needs the public bodyfat table (71 rows, DEXfat response) as CSV; point
BOOSTKIT_BODYFAT_CSV at it or pass the path as the first argument.
"""
import logging
import sys

import pandas as pd

from config import settings
from boostkit.models.dataset import Dataset
from boostkit.services import gradboost, stopping
from boostkit.services.baselearners import LearnerSpec
from boostkit.services.losses import L2Loss
from boostkit.utils.helpers import load_csv

logger = logging.getLogger(__name__)

PREDICTORS = ("hipcirc", "kneebreadth", "anthro3a")
REFERENCE_COEFFICIENTS = (-75.2073365, 0.5114861, 1.9005386, 8.9071301)
REFERENCE_AICC_MSTOP = 149


def load_bodyfat(path: str) -> Dataset:
    header = [str(c).strip() for c in pd.read_csv(path, nrows=0).columns]
    others = [c for c in header if c not in PREDICTORS and c != "DEXfat"]
    d = load_csv(path, "DEXfat", drop=others)
    columns = [d.index_of(name) for name in PREDICTORS]
    return Dataset(predictors=d.predictors[:, columns], names=PREDICTORS, response=d.response)


def check_coefficients(d: Dataset) -> tuple:
    model = gradboost.fit(d, L2Loss(), m_stop=100, sl=0.1)
    intercept, slopes = gradboost.aggregate_coefficients(model)
    return (intercept, *slopes)


def check_aicc(d: Dataset) -> stopping.CriterionPath:
    # the published AICc run leaves out the first ten rows as test data
    train = d.subset(list(range(10, d.n)))
    model = gradboost.fit(train, L2Loss(), [LearnerSpec(kind="pspline") for _ in PREDICTORS],
                          m_stop=500, sl=0.1)
    return stopping.aic_corrected(model, train)


def main(path: str) -> int:
    d = load_bodyfat(path)
    coefficients = check_coefficients(d)
    logger.info(f"Coefficients: {coefficients} (reference {REFERENCE_COEFFICIENTS})")
    aicc = check_aicc(d)
    logger.info(f"AICc-optimal m={aicc.selected}, AICc={aicc.minimum:.6f} "
                f"(reference m={REFERENCE_AICC_MSTOP})")
    coefficients_ok = all(abs(a - b) <= 1e-2 for a, b in zip(coefficients, REFERENCE_COEFFICIENTS))
    aicc_ok = abs(aicc.selected - REFERENCE_AICC_MSTOP) <= 10
    return 0 if coefficients_ok and aicc_ok else 1


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    csv_path = sys.argv[1] if len(sys.argv) > 1 else settings.BODYFAT_CSV
    if not csv_path:
        logger.error("No bodyfat CSV given (argument or BOOSTKIT_BODYFAT_CSV)")
        sys.exit(2)
    sys.exit(main(csv_path))
