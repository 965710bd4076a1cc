from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .encoder import DTYPE, EncodedBatch, GeoGNNEncoder, GraphBatch, init_parameters
from .peakformer import PeakPrediction, PeakQueryTransformer, decode
from .spectra import PeakSet


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 128
    gnn_iterations: int = 5
    n_queries: int = 10
    transformer_layers: int = 4
    n_heads: int = 4
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)


class ECDFormer(nn.Module):
    """Graph encoder followed by the peak-query transformer, in float64."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        self.encoder = GeoGNNEncoder(config.embedding_dim, config.gnn_iterations)
        self.peakformer = PeakQueryTransformer(config.embedding_dim, config.n_queries,
                                               config.transformer_layers, config.n_heads,
                                               config.dropout)
        self.to(DTYPE)
        init_parameters(self, seed, config.embedding_dim)

    def encode(self, batch: GraphBatch) -> EncodedBatch:
        return self.encoder(batch)

    def forward(self, batch: GraphBatch) -> PeakPrediction:
        return self.peakformer(self.encoder(batch))

    @torch.no_grad()
    def predict_peaks(self, batch: GraphBatch) -> list[PeakSet]:
        was_training = self.training
        self.eval()
        try:
            return decode(self(batch))
        finally:
            self.train(was_training)
