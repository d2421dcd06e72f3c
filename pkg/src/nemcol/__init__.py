"""nemcol: colloidal particles in nematic liquid crystal flow.

Penalized (fictitious-domain) solver for the co-rotational Beris-Edwards
model coupled to rigid colloids, with a low-dimensional spectral ODE
oracle and an energy-ledger verification layer.
"""

__version__ = "0.1.0"

from .fields import Grid, QField, ScalarField, VectorField  # noqa: F401
from .rigid_body import BodyState, ColloidShape  # noqa: F401
from .solver import SimConfig, SimState  # noqa: F401
from .tensor_algebra import MaterialConstants  # noqa: F401
