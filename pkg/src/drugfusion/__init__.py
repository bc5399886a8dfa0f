"""drugfusion: multimodal clinical outcome models.

The package turns prescription records into molecular drug representations,
pairs them with bedside time series, and trains small neural models that
predict mortality and length-of-stay outcomes.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    cohort,
    fingerprints,
    metrics,
    models,
    nn,
    resolver,
    smiles,
    synth,
    training,
)
