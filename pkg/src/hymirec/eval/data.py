"""User sequences, their (history | last-n | window) splits, and the item
feature store that turns id lists into model inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codebook import QuantCodes, ResidualCodebook, decode
from ..exceptions import DataError
from ..models import pad_left


@dataclass
class Split:
    history: list
    last_n: list
    window: list


@dataclass
class UserSequence:
    user_id: int
    item_ids: list

    def __len__(self):
        return len(self.item_ids)

    def split(self, cut, n_last, l_max, w):
        """Inputs end at ``cut``: the last ``n_last`` of them are the recent
        segment, up to ``l_max`` before that the long history, and the
        ``w`` items from ``cut`` on are the target window."""
        ids = self.item_ids
        if not 0 < cut <= len(ids):
            raise ValueError(f"cut {cut} outside (0, {len(ids)}]")
        ln_start = max(0, cut - n_last)
        return Split(history=list(ids[max(0, ln_start - l_max):ln_start]),
                     last_n=list(ids[ln_start:cut]),
                     window=list(ids[cut:cut + w]))

    def eval_split(self, n_last, l_max, w):
        """Hold out the final ``w`` items."""
        return self.split(len(self.item_ids) - w, n_last, l_max, w)


class ItemStore:
    """Item embeddings keyed by id.

    Long-history inputs come from ``history_table``: the reconstruction
    from codes when a codebook is given, otherwise the raw embeddings.
    """

    def __init__(self, item_ids, embeddings, codebook: ResidualCodebook = None,
                 codes: QuantCodes = None):
        self.item_ids = np.asarray(item_ids, dtype=np.int64)
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or len(self.item_ids) != len(self.embeddings):
            raise DataError("need one embedding row per item id")
        if len(self.embeddings) == 0:
            raise DataError("empty embedding table")
        if not np.all(np.isfinite(self.embeddings)):
            raise DataError("embedding table has non-finite values")
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise DataError("duplicate item ids in embedding table")
        self._row = {int(i): r for r, i in enumerate(self.item_ids.tolist())}
        if codebook is not None:
            if codes is None or len(codes) != len(self.item_ids):
                raise DataError("codes must cover every item")
            self.history_table = decode(codes, codebook)
        else:
            self.history_table = self.embeddings
        self.codebook = codebook

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return len(self.item_ids)

    def rows(self, ids):
        try:
            return np.fromiter((self._row[int(i)] for i in ids), dtype=np.int64, count=len(ids))
        except KeyError as exc:
            raise DataError(f"unknown item id {exc.args[0]}") from None

    def batch(self, splits):
        """Padded model inputs for a list of Splits."""
        hist = [self.history_table[self.rows(s.history)] for s in splits]
        last = [self.embeddings[self.rows(s.last_n)] for s in splits]
        h, hv = pad_left(hist, self.dim)
        l, lv = pad_left(last, self.dim)
        return h, hv, l, lv
