from .config import RunConfig, load_config, parse_config_text, energy_config
from .report import RunReport, ScalingReport, emit_report, load_report
from .runner import PlanCache, raster_hash, realtime_check, run_simulation, strong_scaling_sweep
