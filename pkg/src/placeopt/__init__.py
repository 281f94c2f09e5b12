"""Learned improvement heuristics for climate sensor placement.

A transformer policy, trained with a continuous n-step actor-critic loop,
iteratively relocates sensors within a candidate-location pool to minimize
spatial-interpolation error, benchmarked against stochastic and
distance-based search baselines.
"""

from .baselines import (context_distance_exhaustive, context_distance_search,
                        exhaustive_best_placement, stochastic_search)
from .env import (EnvConfig, EpisodeTrace, MoveAction, PlacementState,
                  TraceStep, apply_action, initial_state, rollout,
                  sample_action, step_reward, uniform_mixed_swap_policy,
                  uniform_swap_policy, write_trace)
from .errors import (CheckpointError, ConfigKeyError, DomainError,
                     GenerationError, ParseError, PlaceoptError, PolicyError,
                     RolloutError, TrainingError)
from .policy import (Checkpoint, NetConfig, TransformerPolicy, action_probs,
                     actor_grad, critic_grad, critic_param_shapes,
                     decode_action_probs, encode, init_critic_params,
                     init_policy_params, load_checkpoint,
                     node_feature_embedding, policy_param_shapes,
                     position_feature_embedding, save_checkpoint,
                     self_attention, value_estimate)
from .spatial import (EPS_DIST, FieldModel, Location, Polygon,
                      ProblemInstance, SensorReading, generate_instance,
                      idw_estimate, mae, point_in_polygon, read_instance,
                      read_polygon, read_seed_readings, score_network,
                      write_instance, write_polygon, write_seed_readings)
from .training import (Adam, EpochStats, TrainConfig, TrainReport,
                       clip_gradient_norm, evaluate_policy_rollouts,
                       n_step_targets, read_report, train, train_batch,
                       write_report)

__version__ = "0.1.0"
