"""Burst-encodable time-of-flight depth imaging toolkit."""

from .coding import (CodingSet, LossWeights, double_well_value, freeze_binary,
                     init_codes, load_coding, loss_double_well,
                     loss_first_difference, loss_fisher, project_box,
                     save_coding, square_codes, transition_count)
from .decode import (DepthEstimate, LookupTable, build_lookup, compose_depth,
                     decode_lookup, itof_dual_frequency,
                     itof_single_frequency, mae, phase_shift_4step)
from .errors import (BetofError, ConfigurationError, DomainError,
                     NumericError, StateError)
from .learn import (MlpDecoder, TrainConfig, composite_loss, curriculum_snr,
                    decoder_backward, decoder_forward, load_decoder,
                    make_decoder, mlp_decode, optimize_codes, save_decoder,
                    train_joint)
from .physics import (SPEED_OF_LIGHT, AttenuationModel, MeasurementStack,
                      NoiseModel, TimingConfig, apply_noise, attenuation,
                      calibrate_photon_scale, depth_window, emission_waveform,
                      integrate_measurements, max_unambiguous_range)
from .scene import Scene, SceneSpec, generate_scene, load_depth_map

__version__ = "0.1.0"
