import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Text, Tuple

import numpy as np
from pandas import DataFrame
from scipy.special import expit

from .base import BaseComponent
from .dataset import GraphPair, PaddedGraph
from .exceptions import (
    CheckpointFormatException,
    ConfigurationException,
    InvariantViolationException,
    ShapeMismatchException,
    TrainingDivergedException,
    UnusableGraphException,
)
from .graph_extract import FEATURE_DIM
from .metrics import Metrics, binary_metrics
from .optimizers import Adam
from .serialization import Reader, Writer

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12

ADJACENCY_MODES = ('binary', 'weighted')
COMBINE_MODES = ('absolute', 'signed')

CHECKPOINT_MAGIC = b'IRMP'
CHECKPOINT_VERSION = 1


class ModelParams:
    """
    The trainable tensors, by name, in a fixed order.

    W1..Wk are the graph-convolution weights, W{k+1} the dense embedding layer; H1..Hm are the hidden layers of the
    similarity head and Hout its output unit. Biases are b* for the branch and c* for the head.
    """

    def __init__(self, tensors: Dict[Text, np.ndarray], gcn_layers: int, head_layers: int):
        self.tensors = tensors
        self.gcn_layers = gcn_layers
        self.head_layers = head_layers

    def __getitem__(self, name: Text) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Text]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def names(self) -> List[Text]:
        return list(self.tensors)

    @property
    def shapes(self) -> Dict[Text, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self.tensors.items()}

    def zeros_like(self) -> 'ModelParams':
        return ModelParams({name: np.zeros_like(t) for name, t in self.tensors.items()}, self.gcn_layers, self.head_layers)

    def copy(self) -> 'ModelParams':
        return ModelParams({name: t.copy() for name, t in self.tensors.items()}, self.gcn_layers, self.head_layers)

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())

    def layer_names(self):
        gcn = [(f"W{k}", f"b{k}") for k in range(1, self.gcn_layers + 1)]
        embed = (f"W{self.gcn_layers + 1}", f"b{self.gcn_layers + 1}")
        head = [(f"H{k}", f"c{k}") for k in range(1, self.head_layers + 1)]
        return gcn, embed, head, ('Hout', 'cout')


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    adjacency_mode: Text = 'binary'
    combine_mode: Text = 'absolute'
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0 or self.patience <= 0:
            raise ConfigurationException("learning_rate, batch_size, max_epochs and patience must all be positive.")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ConfigurationException(f"adjacency_mode must be one of {ADJACENCY_MODES}, got {self.adjacency_mode!r}.")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigurationException(f"combine_mode must be one of {COMBINE_MODES}, got {self.combine_mode!r}.")

    @classmethod
    def from_config(cls, config: Dict, seed: int) -> 'TrainConfig':
        train = config['TRAIN']
        return cls(
            learning_rate=float(train['learning_rate']),
            batch_size=int(train['batch_size']),
            max_epochs=int(train['max_epochs']),
            patience=int(train['patience']),
            seed=int(seed),
            adjacency_mode=str(train['adjacency_mode']),
            combine_mode=str(train['combine_mode']),
            threshold=float(train['threshold']),
            beta1=float(train['beta1']),
            beta2=float(train['beta2']),
            epsilon=float(train['epsilon']),
        )


@dataclass
class BranchCache:
    adjacency: np.ndarray
    inputs: List[np.ndarray]
    propagated: List[np.ndarray]
    activations: List[np.ndarray]
    pooled: np.ndarray
    pre_embedding: np.ndarray
    embedding: np.ndarray


@dataclass
class HeadCache:
    difference: np.ndarray
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    logit: float
    probability: float


def init_params(feature_dim: int = FEATURE_DIM, gcn_widths: Sequence[int] = (500, 200), embedding_width: int = 200, head_widths: Sequence[int] = (400, 200, 100), seed: int = 0) -> ModelParams:
    """
    Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)) and zero biases.

    :param feature_dim: the node feature count F.
    :param gcn_widths: the widths of the graph-convolution layers.
    :param embedding_width: the width of the dense embedding layer.
    :param head_widths: the widths of the hidden layers of the similarity head.
    :param seed: the initialization seed.
    :return: the ModelParams.
    """
    if not gcn_widths or not head_widths:
        raise ConfigurationException("The model needs at least one graph-convolution layer and one head layer.")

    rng = np.random.default_rng(seed)
    tensors = {}

    def dense(weight: Text, bias: Text, fan_in: int, fan_out: int) -> None:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[weight] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        tensors[bias] = np.zeros(fan_out)

    widths = [feature_dim, *gcn_widths, embedding_width]
    for k in range(1, len(widths)):
        dense(f"W{k}", f"b{k}", widths[k - 1], widths[k])

    widths = [embedding_width, *head_widths]
    for k in range(1, len(widths)):
        dense(f"H{k}", f"c{k}", widths[k - 1], widths[k])
    dense('Hout', 'cout', head_widths[-1], 1)

    return ModelParams(tensors, gcn_layers=len(gcn_widths), head_layers=len(head_widths))


def params_from_config(config: Dict, seed: int) -> ModelParams:
    return init_params(
        FEATURE_DIM,
        [int(w) for w in config['GCN_WIDTHS']],
        int(config['EMBEDDING_WIDTH']),
        [int(w) for w in config['HEAD_WIDTHS']],
        seed,
    )


def _normalized_block(padded_graph: PaddedGraph, adjacency_mode: Text) -> np.ndarray:
    n = padded_graph.real_nodes
    if adjacency_mode == 'binary':
        block = padded_graph.connectivity[:n, :n].astype(np.float64)
    elif adjacency_mode == 'weighted':
        block = padded_graph.adjacency[:n, :n].copy()
    else:
        raise ConfigurationException(f"adjacency_mode must be one of {ADJACENCY_MODES}, got {adjacency_mode!r}.")

    if not np.array_equal(block, block.T):
        raise InvariantViolationException(f"Adjacency of a graph of user {padded_graph.label_user} is not symmetric.")
    if (block < 0).any():
        raise InvariantViolationException(f"Adjacency of a graph of user {padded_graph.label_user} has negative entries.")

    block[np.diag_indices(n)] = 1.0
    inv_sqrt_degree = 1.0 / np.sqrt(block.sum(axis=1))
    return inv_sqrt_degree[:, None] * block * inv_sqrt_degree[None, :]


def normalize_adjacency(padded_graph: PaddedGraph, adjacency_mode: Text = 'binary') -> np.ndarray:
    """
    D^(-1/2) (A + I_real) D^(-1/2), with self-loops on real nodes only and padded rows and columns left at zero.

    :param padded_graph: the PaddedGraph.
    :param adjacency_mode: 'binary' to use edge presence, 'weighted' to use the edge weights.
    :return: the N x N normalized adjacency.
    """
    if not np.array_equal(padded_graph.adjacency, padded_graph.adjacency.T):
        raise InvariantViolationException(f"Adjacency of a graph of user {padded_graph.label_user} is not symmetric.")

    n = padded_graph.real_nodes
    normalized = np.zeros((padded_graph.n, padded_graph.n))
    if n:
        normalized[:n, :n] = _normalized_block(padded_graph, adjacency_mode)
    return normalized


def gcn_forward(a_hat: np.ndarray, h: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    tanh(A_hat H W + bias), the bias broadcast over rows.
    """
    if a_hat.shape[0] != a_hat.shape[1] or a_hat.shape[1] != h.shape[0] or h.shape[1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise ShapeMismatchException(f"Cannot combine A_hat {a_hat.shape}, H {h.shape}, W {w.shape}, bias {bias.shape}.")
    return np.tanh(a_hat @ h @ w + bias)


def masked_mean_pool(h: np.ndarray, real_nodes: int) -> np.ndarray:
    """
    Column mean over the first ``real_nodes`` rows; padded rows are ignored.
    """
    if real_nodes <= 0:
        raise UnusableGraphException("Cannot pool a graph without real nodes.")
    return h[:real_nodes].mean(axis=0)


def _branch(padded_graph: PaddedGraph, params: ModelParams, adjacency_mode: Text) -> BranchCache:
    n = padded_graph.real_nodes
    if n <= 0:
        raise UnusableGraphException(f"A graph of user {padded_graph.label_user} has no real nodes.")
    if padded_graph.features.shape[1] != params['W1'].shape[0]:
        raise ShapeMismatchException(
            f"Graphs carry {padded_graph.features.shape[1]} features but W1 expects {params['W1'].shape[0]}."
        )

    # every product runs on the real block; padded rows never enter the computation
    a_hat = _normalized_block(padded_graph, adjacency_mode)
    h = padded_graph.features[:n]
    gcn, (w_embed, b_embed), _, _ = params.layer_names()

    inputs, propagated, activations = [], [], []
    for w, b in gcn:
        inputs.append(h)
        ah = a_hat @ h
        h = np.tanh(ah @ params[w] + params[b])
        propagated.append(ah)
        activations.append(h)

    pooled = masked_mean_pool(h, n)
    pre_embedding = pooled @ params[w_embed] + params[b_embed]

    return BranchCache(
        adjacency=a_hat,
        inputs=inputs,
        propagated=propagated,
        activations=activations,
        pooled=pooled,
        pre_embedding=pre_embedding,
        embedding=np.maximum(pre_embedding, 0.0),
    )


def branch_forward(padded_graph: PaddedGraph, params: ModelParams, adjacency_mode: Text = 'binary') -> np.ndarray:
    """
    Embed one graph: two graph convolutions with tanh, masked mean pooling, then a dense ReLU layer.

    :param padded_graph: the PaddedGraph.
    :param params: the shared ModelParams.
    :param adjacency_mode: 'binary' or 'weighted'.
    :return: the embedding vector.
    """
    return _branch(padded_graph, params, adjacency_mode).embedding


def _combine(embedding_a: np.ndarray, embedding_b: np.ndarray, combine_mode: Text) -> np.ndarray:
    difference = embedding_a - embedding_b
    if combine_mode == 'absolute':
        return np.abs(difference)
    if combine_mode == 'signed':
        return difference
    raise ConfigurationException(f"combine_mode must be one of {COMBINE_MODES}, got {combine_mode!r}.")


def _head(difference: np.ndarray, params: ModelParams) -> HeadCache:
    _, _, hidden, (w_out, c_out) = params.layer_names()

    x = difference
    inputs, pre_activations = [], []
    for w, c in hidden:
        inputs.append(x)
        z = x @ params[w] + params[c]
        pre_activations.append(z)
        x = np.maximum(z, 0.0)
    inputs.append(x)

    logit = float(x @ params[w_out][:, 0] + params[c_out][0])
    probability = float(np.clip(expit(logit), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR))

    return HeadCache(difference=difference, inputs=inputs, pre_activations=pre_activations, logit=logit, probability=probability)


def siamese_forward(pair: GraphPair, params: ModelParams, adjacency_mode: Text = 'binary', combine_mode: Text = 'absolute') -> float:
    """
    Probability that both graphs of the pair belong to the same user.

    :param pair: the GraphPair.
    :param params: the ModelParams shared by both branches.
    :param adjacency_mode: 'binary' or 'weighted'.
    :param combine_mode: 'absolute' for |e_a - e_b| (order independent) or 'signed' for e_a - e_b.
    :return: a probability in (0, 1).
    """
    embedding_a = branch_forward(pair.a, params, adjacency_mode)
    embedding_b = branch_forward(pair.b, params, adjacency_mode)
    return _head(_combine(embedding_a, embedding_b, combine_mode), params).probability


def bce_loss(probability: float, label: int) -> float:
    """
    Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12].
    """
    p = min(max(float(probability), PROBABILITY_FLOOR), 1.0 - PROBABILITY_FLOOR)
    return float(-(label * np.log(p) + (1 - label) * np.log(1.0 - p)))


def _head_backward(cache: HeadCache, label: int, params: ModelParams, grads: ModelParams, scale: float) -> np.ndarray:
    _, _, hidden, (w_out, c_out) = params.layer_names()

    # d loss / d logit of sigmoid + cross-entropy
    d_logit = (expit(cache.logit) - label) * scale

    grads[w_out][:, 0] += cache.inputs[-1] * d_logit
    grads[c_out][0] += d_logit
    d_x = params[w_out][:, 0] * d_logit

    for k in range(len(hidden) - 1, -1, -1):
        w, c = hidden[k]
        d_z = d_x * (cache.pre_activations[k] > 0)
        grads.tensors[w] += np.outer(cache.inputs[k], d_z)
        grads.tensors[c] += d_z
        d_x = params[w] @ d_z

    return d_x


def _branch_backward(cache: BranchCache, d_embedding: np.ndarray, params: ModelParams, grads: ModelParams) -> None:
    gcn, (w_embed, b_embed), _, _ = params.layer_names()

    d_pre = d_embedding * (cache.pre_embedding > 0)
    grads.tensors[w_embed] += np.outer(cache.pooled, d_pre)
    grads.tensors[b_embed] += d_pre

    n = cache.adjacency.shape[0]
    d_h = np.broadcast_to(params[w_embed] @ d_pre / n, cache.activations[-1].shape)

    for k in range(len(gcn) - 1, -1, -1):
        w, b = gcn[k]
        d_z = d_h * (1.0 - cache.activations[k] ** 2)
        grads.tensors[w] += cache.propagated[k].T @ d_z
        grads.tensors[b] += d_z.sum(axis=0)
        if k:
            # A_hat is symmetric
            d_h = cache.adjacency @ (d_z @ params[w].T)


def _combine_backward(d_difference: np.ndarray, embedding_a: np.ndarray, embedding_b: np.ndarray, combine_mode: Text) -> np.ndarray:
    if combine_mode == 'absolute':
        # subgradient 0 where the embeddings coincide
        return d_difference * np.sign(embedding_a - embedding_b)
    return d_difference


def backward(pair: GraphPair, label: int, params: ModelParams, adjacency_mode: Text = 'binary', combine_mode: Text = 'absolute', loss_scale: float = 1.0) -> ModelParams:
    """
    Analytic gradients of the pair loss with respect to every parameter. The contributions of the two branches are
    summed into the shared branch weights.

    :param pair: the GraphPair.
    :param label: 1 if both graphs belong to the same user, else 0.
    :param params: the ModelParams.
    :param adjacency_mode: 'binary' or 'weighted'.
    :param combine_mode: 'absolute' or 'signed'.
    :param loss_scale: a factor applied to the loss, and therefore to every gradient.
    :return: the gradients, shaped like params.
    """
    grads = params.zeros_like()
    _accumulate_pair(pair.a, pair.b, label, params, grads, adjacency_mode, combine_mode, loss_scale, {})
    return grads


def _cached_branch(graph: PaddedGraph, params: ModelParams, adjacency_mode: Text, branches: Dict[int, BranchCache]) -> BranchCache:
    key = id(graph)
    if key not in branches:
        branches[key] = _branch(graph, params, adjacency_mode)
    return branches[key]


def _accumulate_pair(a: PaddedGraph, b: PaddedGraph, label: int, params: ModelParams, grads: ModelParams, adjacency_mode: Text, combine_mode: Text, scale: float, branches: Dict[int, BranchCache], d_embeddings: Optional[Dict[int, np.ndarray]] = None) -> float:
    cache_a = _cached_branch(a, params, adjacency_mode, branches)
    cache_b = _cached_branch(b, params, adjacency_mode, branches)

    head = _head(_combine(cache_a.embedding, cache_b.embedding, combine_mode), params)
    d_difference = _combine_backward(_head_backward(head, label, params, grads, scale), cache_a.embedding, cache_b.embedding, combine_mode)

    if d_embeddings is None:
        _branch_backward(cache_a, d_difference, params, grads)
        _branch_backward(cache_b, -d_difference, params, grads)
    else:
        # deferred: one branch backward per distinct graph of the batch
        d_embeddings[id(a)] = d_embeddings.get(id(a), 0.0) + d_difference
        d_embeddings[id(b)] = d_embeddings.get(id(b), 0.0) - d_difference

    return bce_loss(head.probability, label)


def _batch_gradients(batch: Sequence[GraphPair], params: ModelParams, config: TrainConfig) -> Tuple[ModelParams, float]:
    grads = params.zeros_like()
    branches: Dict[int, BranchCache] = {}
    d_embeddings: Dict[int, np.ndarray] = {}
    order: List[int] = []
    scale = 1.0 / len(batch)
    loss = 0.0

    # fixed reduction order: pairs by index, then graphs by first appearance
    for pair in batch:
        for graph in (pair.a, pair.b):
            if id(graph) not in branches:
                order.append(id(graph))
        loss += _accumulate_pair(pair.a, pair.b, pair.label, params, grads, config.adjacency_mode, config.combine_mode, scale, branches, d_embeddings)

    for key in order:
        _branch_backward(branches[key], d_embeddings[key], params, grads)

    return grads, loss * scale


def predict_proba(params: ModelParams, pairs: Sequence[GraphPair], adjacency_mode: Text = 'binary', combine_mode: Text = 'absolute') -> np.ndarray:
    """
    Probabilities for many pairs; each distinct graph is embedded once.
    """
    embeddings: Dict[int, np.ndarray] = {}

    def embed(graph: PaddedGraph) -> np.ndarray:
        if id(graph) not in embeddings:
            embeddings[id(graph)] = branch_forward(graph, params, adjacency_mode)
        return embeddings[id(graph)]

    return np.array([_head(_combine(embed(pair.a), embed(pair.b), combine_mode), params).probability for pair in pairs])


def evaluate(params: ModelParams, pairs: Sequence[GraphPair], threshold: float = 0.5, adjacency_mode: Text = 'binary', combine_mode: Text = 'absolute') -> Metrics:
    """
    Verification metrics of a model on a pair set.

    :param params: the ModelParams.
    :param pairs: a non-empty list of GraphPairs.
    :param threshold: a pair is predicted "same user" when its probability is at least this value.
    :return: the Metrics, "same user" being the positive class.
    """
    if not pairs:
        raise ConfigurationException("Cannot evaluate on an empty pair set.")

    probabilities = predict_proba(params, pairs, adjacency_mode, combine_mode)
    predictions = (probabilities >= threshold).astype(np.int64)
    return binary_metrics([pair.label for pair in pairs], predictions)


def train(train_pairs: Sequence[GraphPair], val_pairs: Sequence[GraphPair], config: TrainConfig, params: Optional[ModelParams] = None) -> Tuple[ModelParams, List[Dict]]:
    """
    Mini-batch Adam training with per-epoch shuffling and early stopping on validation F1.

    :param train_pairs: the training pairs.
    :param val_pairs: the validation pairs.
    :param config: the TrainConfig.
    :param params: the initial ModelParams. If not provided, the default architecture is initialized from config.seed.
    :return: the parameters of the best validation F1 epoch and the per-epoch history.
    """
    if not train_pairs or not val_pairs:
        raise ConfigurationException("Training needs non-empty training and validation pair sets.")

    params = init_params(seed=config.seed) if params is None else params.copy()
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed)

    best_params, best_f1, best_epoch = params.copy(), -1.0, 0
    history = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0

        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[start:start + config.batch_size]]
            grads, batch_loss = _batch_gradients(batch, params, config)

            if not np.isfinite(batch_loss):
                raise TrainingDivergedException(
                    f"Loss became {batch_loss} at epoch {epoch}, batch starting at {start}; "
                    f"try a smaller learning rate than {config.learning_rate}."
                )

            optimizer.step(params.tensors, grads.tensors)
            if not params.is_finite():
                raise TrainingDivergedException(f"Parameters became non-finite at epoch {epoch}, batch starting at {start}.")
            epoch_loss += batch_loss * len(batch)

        metrics = evaluate(params, val_pairs, config.threshold, config.adjacency_mode, config.combine_mode)
        history.append({
            'epoch': epoch,
            'train_loss': epoch_loss / len(train_pairs),
            'val_accuracy': metrics.accuracy,
            'val_f1': metrics.f1,
        })
        logger.info(f"Epoch {epoch}: train loss {history[-1]['train_loss']:.6f}, val accuracy {metrics.accuracy:.4f}, val F1 {metrics.f1:.4f}.")

        if metrics.f1 > best_f1:
            best_params, best_f1, best_epoch = params.copy(), metrics.f1, epoch
        elif epoch - best_epoch >= config.patience:
            logger.info(f"Early stop at epoch {epoch}; best validation F1 {best_f1:.4f} at epoch {best_epoch}.")
            break

    return best_params, history


def history_to_frame(history: List[Dict]) -> DataFrame:
    return DataFrame(history, columns=['epoch', 'train_loss', 'val_accuracy', 'val_f1'])


def save_checkpoint(params: ModelParams, path: Text, provenance: Optional[Dict] = None) -> None:
    """
    Write every tensor with its name and shape.
    """
    writer = Writer().raw(CHECKPOINT_MAGIC).pack('H', CHECKPOINT_VERSION).json(provenance or {})
    writer.pack('HH', params.gcn_layers, params.head_layers).pack('I', len(params))
    for name, tensor in params.items():
        writer.string(name).pack('B', tensor.ndim).pack(f"{tensor.ndim}I", *tensor.shape)
        writer.array(tensor, '<f8')

    with open(path, 'wb') as f:
        f.write(writer.getvalue())


def load_checkpoint(path: Text, expected: Optional[ModelParams] = None) -> Tuple[ModelParams, Dict]:
    """
    Read a checkpoint.

    :param path: the checkpoint file.
    :param expected: parameters of the expected architecture; a tensor of another name or shape is rejected.
    :return: the ModelParams and the embedded provenance dict.
    """
    with open(path, 'rb') as f:
        reader = Reader(f.read(), error=CheckpointFormatException)

    reader.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    provenance = reader.json()
    gcn_layers, head_layers = reader.unpack('HH')

    tensors = {}
    for _ in range(reader.unpack('I')):
        name = reader.string()
        ndim = reader.unpack('B')
        shape = tuple(np.atleast_1d(reader.unpack(f"{ndim}I")).tolist())
        count = int(np.prod(shape))
        tensors[name] = reader.array(count, np.dtype('<f8')).reshape(shape).astype(np.float64)

    if not reader.at_end():
        raise CheckpointFormatException(f"Trailing bytes after the last tensor in {path}.")

    params = ModelParams(tensors, gcn_layers, head_layers)
    if expected is not None and params.shapes != expected.shapes:
        raise CheckpointFormatException(f"Checkpoint shapes {params.shapes} do not match the expected {expected.shapes}.")
    if not params.is_finite():
        raise CheckpointFormatException(f"Checkpoint {path} holds non-finite values.")

    return params, provenance


class GSNNTrainer(BaseComponent):
    """
    Builds the model and training settings from the configuration and runs training and evaluation.
    """

    def __init__(self, config=None, seed: int = 0, **overrides):
        super().__init__(config, **overrides)
        self.train_config = TrainConfig.from_config(self.config, seed)

    def init_params(self) -> ModelParams:
        return params_from_config(self.config, self.train_config.seed)

    def fit(self, train_pairs: Sequence[GraphPair], val_pairs: Sequence[GraphPair], params: Optional[ModelParams] = None) -> Tuple[ModelParams, DataFrame]:
        params = self.init_params() if params is None else params
        self.logger.info(f"Training on {len(train_pairs)} pair(s), validating on {len(val_pairs)}.")
        best, history = train(train_pairs, val_pairs, self.train_config, params)
        return best, history_to_frame(history)

    def evaluate(self, params: ModelParams, pairs: Sequence[GraphPair]) -> Metrics:
        c = self.train_config
        return evaluate(params, pairs, c.threshold, c.adjacency_mode, c.combine_mode)

    def settings(self) -> Dict:
        return asdict(self.train_config)
