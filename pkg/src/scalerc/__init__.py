"""Size-scalable reservoir computers for delay and spatio-temporal systems.

Train a delayed echo state network on one delay system time series, or a
parallel shared-weight reservoir on one Kuramoto-Sivashinsky field, then
change the loop delay or the number of subnetworks and run the network
autonomously to explore regimes it was never trained on.
"""

__version__ = "0.1.0"

from .dynsys import (  # noqa: E402
    DivergenceError,
    IkedaParams,
    KsParams,
    MgParams,
    ScalarSeries,
    SpatioTemporalField,
    integrate_ikeda,
    integrate_ks,
    integrate_mackey_glass,
)
from .reservoir import IKEDA_TABLE2, MG_TABLE1, DesnParams  # noqa: E402
from .desn import DelayedReservoir, run_closed_loop, run_open_loop, set_delay, train  # noqa: E402

__all__ = [
    "__version__",
    "DivergenceError",
    "IkedaParams",
    "KsParams",
    "MgParams",
    "ScalarSeries",
    "SpatioTemporalField",
    "integrate_ikeda",
    "integrate_ks",
    "integrate_mackey_glass",
    "IKEDA_TABLE2",
    "MG_TABLE1",
    "DesnParams",
    "DelayedReservoir",
    "run_closed_loop",
    "run_open_loop",
    "set_delay",
    "train",
]
