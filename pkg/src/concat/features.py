"""Turn windowed cascades plus embedding tables into model inputs."""
from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from .data import Cascade, build_cascade_graph
from .embed import EmbeddingTable, WaveletConfig, graphwave_embed
from .model import Example

logger = logging.getLogger(__name__)


def cascade_tables(cascades: Sequence[Cascade], cfg: WaveletConfig) -> dict[str, EmbeddingTable]:
    return {c.cascade_id: graphwave_embed(build_cascade_graph(c), cfg) for c in cascades}


def flatten_tables(tables: Mapping[str, EmbeddingTable]) -> EmbeddingTable:
    """One table keyed ``<cascade_id>/<event node>`` for writing to disk."""
    dims = {t.dim for t in tables.values()}
    if len(dims) != 1:
        raise ValueError(f"inconsistent cascade embedding dimensions {sorted(dims)}")
    vectors = {f"{cid}/{node}": v for cid, t in tables.items() for node, v in t.vectors.items()}
    return EmbeddingTable(dims.pop(), vectors)


def unflatten_table(table: EmbeddingTable) -> dict[str, EmbeddingTable]:
    grouped: dict[str, dict] = {}
    for key, v in table.vectors.items():
        cid, _, node = key.rpartition("/")
        grouped.setdefault(cid, {})[node] = v
    return {cid: EmbeddingTable(table.dim, vecs) for cid, vecs in grouped.items()}


def build_examples(cascades: Sequence[Cascade], global_table: EmbeddingTable,
                   wavelet_cfg: WaveletConfig | None = None,
                   tables: Mapping[str, EmbeddingTable] | None = None) -> list[Example]:
    """Assemble per-event embedding matrices; users absent from the global table get zeros."""
    wavelet_cfg = wavelet_cfg or WaveletConfig()
    out = []
    missing = set()
    for c in cascades:
        graph = build_cascade_graph(c)
        table = tables[c.cascade_id] if tables is not None else graphwave_embed(graph, wavelet_cfg)
        glob = np.zeros((graph.num_nodes, global_table.dim))
        for i, u in enumerate(graph.users):
            if u in global_table:
                glob[i] = global_table[u]
            else:
                missing.add(u)
        out.append(Example(
            cascade_id=c.cascade_id,
            cascade_embeds=table.matrix(graph.nodes),
            global_embeds=glob,
            times=np.asarray(c.times, dtype=float),
            observation_time=float(c.observation_time),
            label=int(c.label),
        ))
    if missing:
        logger.warning("%d users missing from the global embedding; using zero vectors", len(missing))
    return out
