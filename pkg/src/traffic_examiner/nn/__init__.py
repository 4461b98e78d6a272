from .gradcheck import grad_check
from .layers import (
    Conv1dParams,
    DenseParams,
    Tensor,
    conv1d,
    conv1d_backward,
    dense,
    dense_backward,
    dropout,
    dropout_backward,
    lrn,
    lrn_backward,
    maxpool1d,
    maxpool1d_backward,
    pooled_length,
    relu,
    relu_backward,
)
from .losses import cross_entropy, l1_penalty, softmax, softmax_cross_entropy_backward
from .lstm import LstmParams, lstm_sequence, lstm_sequence_backward, lstm_step, lstm_step_backward
from .optim import AdamState, adam_step
