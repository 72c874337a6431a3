"""Few-round model aggregation by intersecting per-node acceptable-weight spaces."""

from .baselines import (FineTuneConfig, PublicSample, draw_public_sample,
                        ensemble_accuracy, ensemble_predict, fine_tune,
                        naive_average, tuning_sweep)
from .data import (Dataset, NodeData, PartitionSpec, generate_synthetic,
                   load_idx, partition, split)
from .geometry import (BallSearchConfig, FisherScales, InfeasibleCenterError,
                       IntersectConfig, ModelSpace, axis_scales,
                       construct_space, fisher_diagonal, hinge_loss, intersect,
                       sample_surface)
from .models import (LogisticModel, MlpModel, TrainConfig, WeightVector,
                     accuracy, accuracy_gate, hidden_activations, neuron_gate,
                     train_logistic, train_mlp)
from .network import (AggregateLayer, ClusterConfig, NeuronSpace,
                      aggregate_mlp, cluster_neurons, greedy_intersect_layer,
                      insert_and_retrain, kmeans, neuron_spaces)

__all__ = [name for name in dir() if not name.startswith("_")]
