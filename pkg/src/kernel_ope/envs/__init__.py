from .dataset import (Dataset, DatasetError, TimeFeatures, TransitionRecord, augment_next_actions,
                      collect_transitions, featurizer, time_augment)
from .policies import GaussianPolicy, MixturePolicy, PolicyError, TabularPolicy, mixture, mixture_schedule
from .rollout import rollout_value
from .synthetic import SyntheticRkhsEnv, derive_reward, gaussian_rbf_expectation, make_synthetic_env
from .tabular import (MDPError, TabularMDP, TabularQ, augment_mdp_with_time, exact_value, finite_horizon_value,
                      iterate_value, q_table, random_mdp, random_softmax_policy, state_values, tabular_q_norm)
