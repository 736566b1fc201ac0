"""CoCo bond pricing and calibration under the AT1P first-passage structural model."""
from importlib.resources import files

from .at1p import (At1pParams, PathGrid, VolTermStructure, barrier, first_passage_time, integrated_variance,
                   simulate_paths, survival_probability)
from .bonds import BondSpec, CocoSpec, price_pdb_analytic, ytm_from_price
from .calibration import (CalibrationReport, CalibrationSpec, ObservableModel, calibrate, calibrate_cds,
                          calibrate_cds_from_start, calibrate_full, cost, stage1_anneal, stage2_lm)
from .capital import (CapitalRatioModel, RegressionResult, average_params, capital_ratio_proxy,
                      decorrelated_capital_ratio, estimate_x_std_profile, ols_fit)
from .cds import CdsSchedule, cds_price, par_spread
from .engine import (PriceResult, SimConfig, path_statistics, price_coco, price_coco_stripped, price_pdb_mc,
                     sampling_frequency_check)
from .equity import equity_profile, equity_value
from .market import (BalanceSheetRecord, CdsQuote, MarketSnapshot, discount_factor, load_balance_sheet_panel,
                     load_cds_quotes)

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a file shipped in the package ``data`` directory."""
    return files(__name__).joinpath("data", name)
