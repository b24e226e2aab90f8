"""Co-attention between text and diagram features.

Text features pass through a stack of self-attention units to give H_T. The
diagram features then pass through the same number of units that self-attend
and are guided by H_T, giving H_D. The decoder reads the row concatenation
F_R = [F_T; H_D] and a pooled vector f_R.
"""

from __future__ import annotations

from . import numerics as nx
from .config import RunConfig
from .errors import ShapeError
from .layers import AttentionReduce, SAUnit, SGAUnit
from .numerics import Linear, ParamSet, Tensor


class Reasoner:
    def __init__(self, params: ParamSet, cfg: RunConfig):
        d = cfg.d_model
        self.cfg = cfg
        self.diag_proj = (Linear(params, "reasoner.diag_proj", cfg.diag_dim, d)
                          if cfg.diag_dim != d else None)
        self.text_units = [SAUnit(params, f"reasoner.text{i}", d, cfg.d_ff,
                                  cfg.residual, cfg.layer_norm)
                           for i in range(cfg.reasoner_units)]
        self.diag_units = [SGAUnit(params, f"reasoner.diag{i}", d, cfg.d_ff,
                                   cfg.residual, cfg.layer_norm)
                           for i in range(cfg.reasoner_units)]
        self.text_summary = Linear(params, "reasoner.text_summary", 2 * d, d)
        self.reduce = AttentionReduce(params, "reasoner.reduce", d)
        self.joint = Linear(params, "reasoner.joint", 2 * d, d)

    def coattend(self, F_T, F_D) -> Tensor:
        F_T, F_D = nx.as_tensor(F_T), nx.as_tensor(F_D)
        if F_T.ndim != 2 or F_T.shape[1] != self.cfg.d_model:
            raise ShapeError(f"text features must be l×{self.cfg.d_model}, got {F_T.shape}")
        if F_D.ndim != 2 or F_D.shape[1] != self.cfg.diag_dim:
            raise ShapeError(f"diagram features must be m×{self.cfg.diag_dim}, got {F_D.shape}")
        H_T = F_T
        for unit in self.text_units:
            H_T = unit(H_T)
        H_D = self.diag_proj(F_D) if self.diag_proj is not None else F_D
        for unit in self.diag_units:
            H_D = unit(H_D, H_T)
        return H_D

    @staticmethod
    def fuse_sequence(F_T, H_D) -> Tensor:
        return nx.concat([nx.as_tensor(F_T), nx.as_tensor(H_D)], axis=0)

    def fuse_vector(self, F_T, H_D) -> Tensor:
        F_T = nx.as_tensor(F_T)
        if F_T.shape[0] < 1:
            raise ShapeError("fuse_vector needs at least one text row")
        f_T = self.text_summary(nx.concat([F_T[0], F_T[F_T.shape[0] - 1]], axis=0))
        h_D = self.reduce(H_D)
        return self.joint(nx.concat([f_T, h_D], axis=0))

    def __call__(self, F_T, F_D):
        """Returns (F_R, f_R)."""
        H_D = self.coattend(F_T, F_D)
        return self.fuse_sequence(F_T, H_D), self.fuse_vector(F_T, H_D)

