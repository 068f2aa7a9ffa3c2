"""Deterministic shared-micromobility fleet simulator and scheduling lab.

Subpackages:

* `world` - region geometry and static configuration
* `ingest` - trip parsing, demand tensors, background/synthetic demand
* `forecast` - historical-mean demand prediction
* `engine` - the episodic day simulator
* `sched_trad` / `sched_asmv` - traditional and self-driving schedulers
* `nets` / `learn` - policy networks and the alternating PPO trainer
* `analytics` - satisfaction metrics, KS test, economics, sweeps
* `harness` - prebuilt worlds and multi-day experiment drivers
* `cli` - the `fleetlab` command-line entry point
"""

__version__ = "0.1.0"

from .world import (RegionMap, WorldConfig, build_region_map, haversine_miles,
                    load_region_map)
from .ingest import (DemandTensor, TripRecord, aggregate_demand,
                     estimate_background_demand, generate_synthetic_demand,
                     parse_trips)
from .forecast import DemandPredictor, fit_predictor, predict
from .engine import (EpisodeTrace, FleetState, StepOutcome, aggregate,
                     deploy_asmv, deploy_traditional, reset, run_episode, step)
from .nets import Mlp, PolicyBundle, grad_check
from .learn import TrainConfig, gae_advantages, mc_advantage, ppo_update, train
from .analytics import (EconLedger, diff_report, ks_two_sample, net_revenue,
                        satisfaction_rate, sweep, trip_revenue)
