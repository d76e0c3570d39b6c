"""Dataset construction, training and inference for the prediction networks."""

from .features import FrameTable, build_frame_table, cv_anchor, observed_track, track_vector
from .models import (AgentDataset, EventDataset, FuturePredictor, RpnDataset, RpnModel,
                     RtnModel, SceneInput, TrainConfig, build_agent_dataset, build_epn_dataset,
                     build_fln_dataset, build_rpn_dataset, build_rtn_dataset, predict,
                     rtn_targets, train_bayesian, train_epn, train_fln, train_rpn, train_rtn)
