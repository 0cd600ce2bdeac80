"""Serialized form of a ROMDP (tables, abstraction parameters and values)."""
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from gensafe.abstraction import ActionGrid, GmmClassifier, RomdpModel
from gensafe.dimred import MapperNet, Normalizer
from gensafe.errors import VersionMismatchError
from gensafe.tinynet import Mlp

logger = logging.getLogger(__name__)

ROMDP_FORMAT = "gensafe.romdp"
ROMDP_VERSION = 1


class NormalizerDoc(BaseModel):
    minimum: List[float]
    maximum: List[float]


class MapperDoc(BaseModel):
    sizes: List[int]
    activations: List[str]
    params: List[list]
    target_mean: List[float]
    target_scale: List[float]
    heldout_mse: Optional[float] = None


class GmmDoc(BaseModel):
    weights: List[float]
    means: List[List[float]]
    covariances: List[List[List[float]]]


class GridDoc(BaseModel):
    low: List[float]
    high: List[float]
    k_a: int


class RomdpDoc(BaseModel):
    format: str = ROMDP_FORMAT
    version: int = ROMDP_VERSION
    k_s: int
    n_actions: int
    delta: float
    discount: float
    reduced_cost: List[List[float]]
    transition: List[List[List[float]]]
    reduced_policy: List[List[float]]
    pair_counts: List[List[int]]
    epoch_pair_counts: List[List[int]]
    path_counts: List[List[List[int]]]
    values: Optional[List[float]] = None
    normalizer: Optional[NormalizerDoc] = None
    mapper: Optional[MapperDoc] = None
    gmm: Optional[GmmDoc] = None
    grid: Optional[GridDoc] = None


def to_document(model: RomdpModel, values: Optional[np.ndarray] = None) -> RomdpDoc:
    doc = RomdpDoc(
        k_s=model.k_s,
        n_actions=model.n_actions,
        delta=model.delta,
        discount=model.discount,
        reduced_cost=model.reduced_cost.tolist(),
        transition=model.transition.tolist(),
        reduced_policy=model.reduced_policy.tolist(),
        pair_counts=model.pair_counts.tolist(),
        epoch_pair_counts=model.epoch_pair_counts.tolist(),
        path_counts=model.path_counts.tolist(),
        values=None if values is None else np.asarray(values, dtype=float).tolist(),
    )
    if model.normalizer is not None:
        doc.normalizer = NormalizerDoc(minimum=model.normalizer.minimum.tolist(),
                                       maximum=model.normalizer.maximum.tolist())
    if model.mapper is not None:
        net = model.mapper.net
        heldout = model.mapper.heldout_mse
        doc.mapper = MapperDoc(sizes=net.sizes, activations=net.activations,
                               params=[p.tolist() for p in net.params],
                               target_mean=model.mapper.target_mean.tolist(),
                               target_scale=model.mapper.target_scale.tolist(),
                               heldout_mse=None if np.isnan(heldout) else heldout)
    if model.gmm is not None:
        doc.gmm = GmmDoc(weights=model.gmm.weights.tolist(), means=model.gmm.means.tolist(),
                         covariances=model.gmm.covariances.tolist())
    if model.grid is not None:
        doc.grid = GridDoc(low=list(model.grid.low), high=list(model.grid.high), k_a=model.grid.k_a)
    return doc


def from_document(doc: RomdpDoc) -> Tuple[RomdpModel, Optional[np.ndarray]]:
    if doc.format != ROMDP_FORMAT or doc.version != ROMDP_VERSION:
        raise VersionMismatchError(f"Unsupported ROMDP file {doc.format!r} version {doc.version}, "
                                   f"expected {ROMDP_FORMAT!r} version {ROMDP_VERSION}")
    normalizer = mapper = gmm = grid = None
    if doc.normalizer is not None:
        normalizer = Normalizer(np.array(doc.normalizer.minimum), np.array(doc.normalizer.maximum))
    if doc.mapper is not None:
        net = Mlp.from_params(doc.mapper.sizes, doc.mapper.activations, [np.array(p) for p in doc.mapper.params])
        mapper = MapperNet(net, np.array(doc.mapper.target_mean), np.array(doc.mapper.target_scale),
                           heldout_mse=float("nan") if doc.mapper.heldout_mse is None else doc.mapper.heldout_mse)
    if doc.gmm is not None:
        gmm = GmmClassifier(np.array(doc.gmm.weights), np.array(doc.gmm.means), np.array(doc.gmm.covariances))
    if doc.grid is not None:
        grid = ActionGrid(tuple(doc.grid.low), tuple(doc.grid.high), doc.grid.k_a)
    model = RomdpModel(
        k_s=doc.k_s,
        n_actions=doc.n_actions,
        reduced_cost=np.array(doc.reduced_cost, dtype=float).reshape(doc.k_s, doc.n_actions),
        transition=np.array(doc.transition, dtype=float).reshape(doc.k_s, doc.n_actions, doc.k_s),
        reduced_policy=np.array(doc.reduced_policy, dtype=float).reshape(doc.k_s, doc.n_actions),
        pair_counts=np.array(doc.pair_counts, dtype=np.int64).reshape(doc.k_s, doc.n_actions),
        epoch_pair_counts=np.array(doc.epoch_pair_counts, dtype=np.int64).reshape(doc.k_s, doc.n_actions),
        path_counts=np.array(doc.path_counts, dtype=np.int64).reshape(doc.k_s, doc.n_actions, doc.k_s),
        delta=doc.delta,
        discount=doc.discount,
        normalizer=normalizer, mapper=mapper, gmm=gmm, grid=grid,
    )
    values = None if doc.values is None else np.array(doc.values, dtype=float)
    return model, values


def save_romdp(path: Union[str, Path], model: RomdpModel, values: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_document(model, values).model_dump_json())
    logger.debug(f"Saved ROMDP with {model.k_s} states and {model.n_actions} actions to {path}")
    return path


def load_romdp(path: Union[str, Path]) -> Tuple[RomdpModel, Optional[np.ndarray]]:
    """Read a ROMDP file written by `save_romdp`.

    Raises:
        VersionMismatchError: If the file has another format or version
    """
    data = json.loads(Path(path).read_text())
    if data.get("format") != ROMDP_FORMAT or data.get("version") != ROMDP_VERSION:
        raise VersionMismatchError(f"Unsupported ROMDP file {data.get('format')!r} version {data.get('version')}")
    return from_document(RomdpDoc.model_validate(data))
