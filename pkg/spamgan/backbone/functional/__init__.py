from .gru import gru_forward_single, gru_forward
