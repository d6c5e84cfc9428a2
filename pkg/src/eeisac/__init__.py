"""Energy-efficient precoding and RF-chain selection for OFDM ISAC transmitters."""

from .channel import (AngleGrid, ChannelSet, ClusterParams, Target, TargetScene,
                      generate_channel, rx_steering, steering_vector, tx_steering)
from .comm import (optimal_receivers_and_weights, spectral_efficiency,
                   wmmse_rate)
from .config import Scenario, load_config
from .errors import (ArchitectureError, DimensionError, InfeasibleError,
                     SolverError)
from .fd_optimizer import (DesignResult, OptimizerOptions, OptimizerTrace,
                           design_precoder_given_selection, run_alg1,
                           run_tradeoff)
from .hybrid import (design_pc_hybrid, fc_match, pc_match, power_normalize,
                     refine_digital)
from .radar import (CFARConfig, RDMap, ca_cfar_detect, calibrate_cfar,
                    detect_scene, predict_rd_noise_var, rd_transform)
from .selection import (all_on_design, brute_force_search, fc_candidate_sweep,
                        greedy_search, random_selection)
from .system_model import (HybridPrecoder, PrecoderSet, SelectionMask,
                           SystemConfig, energy_efficiency)

__version__ = "0.1.0"
