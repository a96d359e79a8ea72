"""Deep Koopman vehicle-dynamics toolkit.

Trains a lifted-space linear model of planar vehicle dynamics on simulator
data (with an optional physics term tying predictions to measured body-frame
accelerations) and adapts the lifted-space matrices online with sliding-window
least squares. See README for the CLI walkthrough.
"""

from ._backend import NUMBA_ENABLED, backend_name

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "backend_name", "__version__"]
