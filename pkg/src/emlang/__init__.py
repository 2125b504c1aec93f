"""Two agents invent a discrete code by playing a referential game.

A speaker compresses an image into a short symbol string; a listener
uses that string to pick the described image out of a lineup and to
redraw it. Training is plain gradient descent end to end thanks to a
straight-through discretization, no reinforcement learning involved.

Subpackages: corpus (data), nets (models and message ops), game
(losses, training, checkpoints), analysis (evaluation battery),
service (HTTP probe API), cli (command line).
"""

from .corpus import (
    Dataset,
    GameBatch,
    compose_sequence_dataset,
    decode_pgm,
    encode_pgm,
    load_digits_dataset,
    load_image_folder,
    load_mnist_idx,
    sample_game_batch,
)
from .game import (
    Checkpoint,
    LossBreakdown,
    TrainConfig,
    TrainingDiverged,
    draw_loss,
    guess_loss,
    load_checkpoint,
    reg_loss,
    save_checkpoint,
    total_loss,
    train,
)
from .nets import (
    LengthRange,
    Message,
    NetBundle,
    NetConfig,
    Vocabulary,
    build_nets,
    discretize_straight_through,
    draw,
    encode_candidates,
    listen,
    speak,
)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "Dataset", "GameBatch", "LengthRange", "LossBreakdown",
    "Message", "NetBundle", "NetConfig", "TrainConfig", "TrainingDiverged",
    "Vocabulary", "build_nets", "compose_sequence_dataset", "decode_pgm",
    "discretize_straight_through", "draw", "draw_loss", "encode_candidates",
    "encode_pgm", "guess_loss", "listen", "load_checkpoint",
    "load_digits_dataset", "load_image_folder", "load_mnist_idx", "reg_loss",
    "sample_game_batch", "save_checkpoint", "speak", "total_loss", "train",
]
