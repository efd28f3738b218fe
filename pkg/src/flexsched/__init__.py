"""Flexible job-shop scheduling toolkit.

Data model and benchmark I/O, a graph-based scheduling environment,
dispatching-rule and exact baselines, a graph-attention policy trained with
clipped-surrogate policy optimisation, a diverse-policy generation loop, and
a benchmark harness.
"""

from .dispatch import DispatchRule, all_rules, best_dr, solve_dr
from .dssp import HPDomain, TpeSampler, build_validation, cluster_policies, dssp, eval_policy
from .exact import ExactResult, SolverBudget, lower_bound, solve_exact
from .instance import (GenParams, Instance, InstanceFormatError, Job, Operation,
                       fig2_instance, generate_instance, load_instance,
                       parse_instance, write_instance)
from .policy import (ModelSchemaError, PolicyParams, action_distribution,
                     actor_logits, attention_score, critic_value, embed,
                     init_policy, load_model, save_model)
from .ppo import RolloutBuffer, TrainConfig, collect_episode, ppo_update, train_policy
from .state import (Action, GraphState, MaskRule, Schedule, ScheduleError,
                    init_state, legal_actions, mask_actions, rollout, step,
                    validate_schedule)

__version__ = "0.1.0"
