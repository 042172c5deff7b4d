from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from mdm_sched.predictors import PredictionFrame, Predictor
from mdm_sched.seqstate import SequenceState


class MapPredictor(Predictor):
    """Test stub: fixed confidence (and token) per absolute position, constant
    across steps. Unlisted positions default to confidence 0.5, token 1."""

    def __init__(
        self,
        conf_by_pos: dict[int, float],
        token_by_pos: dict[int, int] | None = None,
        vocab_size: int = 257,
        mask_id: int = 256,
    ) -> None:
        self.conf_by_pos = conf_by_pos
        self.token_by_pos = token_by_pos or {}
        self.vocab_size = vocab_size
        self.mask_id = mask_id

    def predict(self, state: SequenceState, block: int, step: int) -> PredictionFrame:
        positions = self._masked_or_raise(state, block)
        entries = {
            p: (self.token_by_pos.get(p, 1), self.conf_by_pos.get(p, 0.5)) for p in positions
        }
        return PredictionFrame(block=block, step=step, entries=entries)


@pytest.fixture
def map_predictor():
    return MapPredictor
