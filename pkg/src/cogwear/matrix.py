"""Named feature matrix with explicit missingness.

Rows are participants, columns are registry feature names. Missing cells are
NaN in the float value array. Column kinds distinguish plain numeric columns
from ordinal integers and nominal codes; nominal columns carry a code -> label
dictionary and are one-hot expanded before entering a learner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SchemaError

MISSING_TOKEN = ""

KIND_NUMERIC = "numeric"
KIND_ORDINAL = "ordinal"
KIND_NOMINAL = "nominal"


@dataclass
class FeatureMatrix:
    ids: list[str]
    columns: list[str]
    values: np.ndarray                      # (n, p) float64, NaN = missing
    kinds: dict[str, str]
    categories: dict[str, dict[int, str]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise SchemaError(
                f"value array shape {self.values.shape} does not match "
                f"{len(self.ids)} rows x {len(self.columns)} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            raise SchemaError("duplicate column names")

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select_columns(self, names: list[str]) -> "FeatureMatrix":
        idx = [self.columns.index(n) for n in names]
        return FeatureMatrix(
            ids=list(self.ids),
            columns=list(names),
            values=self.values[:, idx].copy(),
            kinds={n: self.kinds[n] for n in names},
            categories={n: dict(self.categories[n]) for n in names if n in self.categories},
        )

    def select_rows(self, index: np.ndarray) -> "FeatureMatrix":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return FeatureMatrix(
            ids=[self.ids[i] for i in index],
            columns=list(self.columns),
            values=self.values[index].copy(),
            kinds=dict(self.kinds),
            categories={k: dict(v) for k, v in self.categories.items()},
        )

    def one_hot(self) -> tuple[np.ndarray, list[str]]:
        """Expand nominal columns into indicator columns.

        Indicator order follows sorted category codes so the design matrix is
        stable regardless of which codes appear in a particular row subset.
        """
        blocks, names = [], []
        for j, name in enumerate(self.columns):
            col = self.values[:, j]
            if self.kinds.get(name) == KIND_NOMINAL:
                for code in sorted(self.categories.get(name, {})):
                    blocks.append((col == code).astype(np.float64))
                    names.append(f"{name}_{code}")
            else:
                blocks.append(col)
                names.append(name)
        return np.column_stack(blocks), names

    # ---- serialization: CSV of values + JSON sidecar with column metadata

    def to_csv(self, csv_path: str | Path, meta_path: str | Path | None = None) -> None:
        csv_path = Path(csv_path)
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "participant_id", self.ids)
        df.to_csv(csv_path, index=False, na_rep=MISSING_TOKEN)
        meta = {
            "columns": [
                {
                    "name": c,
                    "kind": self.kinds[c],
                    **(
                        {"categories": {str(k): v for k, v in self.categories[c].items()}}
                        if c in self.categories
                        else {}
                    ),
                }
                for c in self.columns
            ],
            "missing_token": MISSING_TOKEN,
        }
        if meta_path is None:
            meta_path = csv_path.with_suffix(".meta.json")
        Path(meta_path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, csv_path: str | Path, meta_path: str | Path | None = None) -> "FeatureMatrix":
        csv_path = Path(csv_path)
        if meta_path is None:
            meta_path = csv_path.with_suffix(".meta.json")
        meta = json.loads(Path(meta_path).read_text())
        df = pd.read_csv(csv_path, dtype={"participant_id": str})
        if "participant_id" not in df.columns:
            raise SchemaError(f"{csv_path}: missing participant_id column")
        columns = [c["name"] for c in meta["columns"]]
        if list(df.columns[1:]) != columns:
            raise SchemaError(f"{csv_path}: columns do not match sidecar metadata")
        kinds = {c["name"]: c["kind"] for c in meta["columns"]}
        categories = {
            c["name"]: {int(k): v for k, v in c["categories"].items()}
            for c in meta["columns"]
            if "categories" in c
        }
        return cls(
            ids=df["participant_id"].tolist(),
            columns=columns,
            values=df[columns].to_numpy(dtype=np.float64),
            kinds=kinds,
            categories=categories,
        )
