"""Two-stream graph attention with dynamic temporal pooling for
human-object interaction recognition on spatio-temporal video graphs."""

from .tensor import (GradCheckReport, NumericError, ParamStore, ShapeError, Tape, Tensor,
                     grad_check)
from .data import (EntityTrack, StreamFeatures, SynthConfig, VideoGraphSample, DataError,
                   build_streams, init_adjacency, load_dataset, save_dataset, synth_generate)
from .temporal import BiRnnParams, enhance
from .spatial import AttentionRecord, GatParams, gat_attention, gat_aggregate, gcn_aggregate, parse_video
from .pooling import (DtmParams, DtpParams, PoolingWindow, TcnParams, distinction, dtm_forward,
                      dtp_pool, fuse_streams, pairwise_similarity, pooled_length, selection_mask)
from .heads import (MetricsReport, Prediction, affordance_readout, confusion_matrix, joint_loss,
                    macro_f1, subactivity_readout, topk_accuracy)
from .training import (ForwardOutput, TrainConfig, TrainLog, TrainResult, TrainingDiverged,
                       evaluate, forward, init_params, sgd_step, train)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
