"""Daily crypto return forecasting with a partial-multivariate transformer.

Modules: ``market_data`` (kline ingestion, split, scaling), ``indicators``
(feature matrix), ``autograd`` (numpy reverse-mode engine), ``pmformer``,
``baselines`` (naive, AR, DLinear), ``training``, ``backtest`` and ``cli``.
"""

from .errors import (
    ConfigError,
    DataError,
    NumericError,
    PmcryptoError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericError", "PmcryptoError", "ShapeError",
           "__version__"]
