"""Reference results on the bodyfat data; runs only when the CSV is available."""
import pytest

from config import settings
from scripts import bodyfat_check

pytestmark = pytest.mark.skipif(not settings.BODYFAT_CSV, reason="BOOSTKIT_BODYFAT_CSV not set")


@pytest.fixture(scope="module")
def bodyfat():
    return bodyfat_check.load_bodyfat(settings.BODYFAT_CSV)


class TestBodyfat:

    def test_shape(self, bodyfat):
        assert bodyfat.n == 71
        assert bodyfat.names == bodyfat_check.PREDICTORS

    def test_linear_coefficients(self, bodyfat):
        coefficients = bodyfat_check.check_coefficients(bodyfat)
        assert coefficients == pytest.approx(bodyfat_check.REFERENCE_COEFFICIENTS, abs=1e-2)

    def test_aicc_stopping(self, bodyfat):
        path = bodyfat_check.check_aicc(bodyfat)
        assert abs(path.selected - bodyfat_check.REFERENCE_AICC_MSTOP) <= 10
