# SPDX-License-Identifier: Apache-2.0
"""Feature contamination lab.

Configs are plain dicts with the same keys as the JSON config files accepted by
the ``contamlab`` command line tool.
"""

import json
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Union

import numpy as np

from . import _contamlab
from ._contamlab import (  # noqa: F401
    ConfigError,
    __version__,
    berry_esseen_rate,
    build_dictionary,
    csv_schema_version,
    forward,
    hinge_gradient,
    init_classification_net,
    metrics_columns,
    neuron_columns,
    presets,
    sample,
    sgd_update,
    trace_columns,
)

Config = Dict[str, Any]


def load_config(preset_or_path: str, overrides: Optional[Dict[str, Any]] = None) -> Config:
    """Load a preset by name or a JSON file by path, with dotted-key overrides."""
    flat = {k: _override_text(v) for k, v in (overrides or {}).items()}
    return json.loads(_contamlab.load_config_json(preset_or_path, flat))


def resolve(config: Config) -> Config:
    return json.loads(_contamlab.resolve_json(json.dumps(config)))


@dataclass
class RunResult:
    manifest: Dict[str, Any]
    records: List[Dict[str, Any]]
    projections: np.ndarray  # m x d0, final <w_k, m_j>
    hidden: np.ndarray
    output: np.ndarray

    @property
    def final(self) -> Dict[str, Any]:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)


def run(config: Union[str, Config], overrides: Optional[Dict[str, Any]] = None,
        out_dir: Optional[str] = None) -> RunResult:
    """Run one experiment. With ``out_dir`` the CSV outputs are written under
    ``out_dir/<run id>``."""
    if isinstance(config, str):
        config = load_config(config, overrides)
    elif overrides:
        raise ValueError("overrides apply only when loading a preset or file")
    doc, proj, hidden, output = _contamlab.run_json(json.dumps(config), out_dir or "")
    doc = json.loads(doc)
    return RunResult(doc["manifest"], doc["records"], proj, hidden, output)


def verify(config: Union[str, Config] = "fig3-classification-relu") -> Dict[str, Any]:
    if isinstance(config, str):
        config = load_config(config)
    return json.loads(_contamlab.verify_json(json.dumps(config)))


def export_run(run_dir: str) -> Dict[str, Any]:
    return json.loads(_contamlab.export_run_json(str(run_dir)))


def _override_text(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
