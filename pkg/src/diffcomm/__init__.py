"""Goal-oriented image link at desk scale.

A conditional diffusion codec whose terminal noise latent is projected onto
a basis regenerated from shared seeds, so only a handful of weights plus the
condition maps cross the channel. The transmitter validates each candidate
reconstruction locally before sending, and the receiver regenerates the
approved image bit for bit.
"""

from .codec import (ConvergenceError, DegenerateBasisError, GdConfig, SeedBasis, WeightVector,
                    build_basis, project_exact, project_gd, reconstruct, truncate_topk)
from .diffusion import (CheckpointError, ConditionSet, DenoiserParams, Schedule, TrainConfig,
                        default_schedule, denoiser_predict, forward_diffuse, init_denoiser,
                        load_checkpoint, make_linear_schedule, reverse_sample, save_checkpoint,
                        train_diffgo)
from .metrics import (InsufficientDataError, MetricScore, downstream_miou, edge_iou,
                      feedback_metric, frechet_distance_sq, rmse, segment_by_levels, toy_fid)
from .numerics import gaussian_stream, mix_seeds, splitmix64_next
from .protocol import (BasisMismatchError, CorruptMessageError, DiffGoMessage,
                       FrameTooLargeError, MalformedMessageError, TruncatedFrameError,
                       UnsupportedFormatError, decode_message, encode_message,
                       floats_transmitted, framed_stream_transport, in_memory_transport,
                       receive_pipeline, transmit_pipeline)
from .scenes import (Scene, SceneConfig, extract_edges, generate_scene, load_manifest,
                     make_conditions, write_manifest)

__version__ = "0.1.0"
