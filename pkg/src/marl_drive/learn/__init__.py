"""Learning: policy networks, PPO, imitation (BC, GAIL), curiosity and trainers."""
from .demos import (
    Centerline,
    DemoDataset,
    DemoFailure,
    PursuitConfig,
    discretize_race_action,
    pure_pursuit,
    record_demos,
)
from .gail import Discriminator, gail_reward_from_logit, gail_step
from .icm import FEATURE_DIM, IcmModule, curiosity_step
from .io import (
    CheckpointError,
    DemoFileError,
    check_architecture,
    load_checkpoint,
    load_demos,
    save_checkpoint,
    save_demos,
)
from .nn import Adam, Mlp, ShapeError
from .policy import MlpPolicy, action_agreement, bc_loss, bc_loss_and_grad, policy_loss_and_grad
from .ppo import PpoConfig, RolloutBuffer, UpdateAborted, combine_rewards, gae, normalize_advantages, ppo_update
from .toy import CorridorEnv, value_iteration
from .trainer import TrainConfig, Trainer, TrainingDiverged, train_individual, train_shared
