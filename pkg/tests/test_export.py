"""
Tests for JSON-lines, CSV and SVG output.
"""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from app.services.export_service import (
    ExportError,
    polytope_from_json,
    read_ensemble_jsonl,
    read_tessellation_jsonl,
    write_ensemble_jsonl,
    write_frame,
    write_svg,
    write_tessellation_jsonl,
)
from app.services.geometry import ConvexPolytope
from app.services.shrink_service import window_census
from app.services.split_kernels import SplitKernelSpec
from app.services.tessellation_service import check_tessellation, simulate_window


class TestTessellationFiles:
    def test_polytope_record(self, unit_cube):
        body = polytope_from_json(unit_cube.to_json())
        assert body.volume == pytest.approx(1.0)

    def test_header_and_record_count(self, stit_2d, tmp_path):
        path = write_tessellation_jsonl(stit_2d, tmp_path / "y.jsonl")
        lines = path.read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        assert header["type"] == "header"
        assert header["schema"] == 1
        assert header["n_polytopes"] == stit_2d.split_count()
        assert len(lines) == 1 + stit_2d.split_count()
        assert all(json.loads(line)["type"] == "polytope" for line in lines[1:])

    def test_replay_restores_cells(self, stit_2d, tmp_path):
        path = write_tessellation_jsonl(stit_2d, tmp_path / "y.jsonl")
        back = read_tessellation_jsonl(path)
        assert check_tessellation(back) == []
        assert set(back.nodes) == set(stit_2d.nodes)
        for nid, node in stit_2d.nodes.items():
            np.testing.assert_allclose(back.nodes[nid].polytope.vertices, node.polytope.vertices)
            assert back.nodes[nid].birth == node.birth
        assert back.kernel == stit_2d.kernel
        assert back.horizon == stit_2d.horizon

    def test_replay_spatial(self, stit_3d, tmp_path):
        back = read_tessellation_jsonl(write_tessellation_jsonl(stit_3d, tmp_path / "y3.jsonl"))
        assert len(back.leaves()) == len(stit_3d.leaves())
        assert sum(n.polytope.volume for n in back.leaves()) == pytest.approx(27.0)

    def test_zero_horizon_file_is_header_only(self, unit_square, iso2, tmp_path):
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 0.0, seed=1)
        path = write_tessellation_jsonl(Y, tmp_path / "empty.jsonl")
        assert len(path.read_text(encoding="utf-8").splitlines()) == 1

    def test_frozen_cells_survive(self, iso2, tmp_path):
        W = ConvexPolytope.box([0.0, 0.0], [2.0, 2.0])
        Y = simulate_window(W, SplitKernelSpec.hard_core(0.3, rate_mode="raw"), iso2, 50.0, seed=5)
        back = read_tessellation_jsonl(write_tessellation_jsonl(Y, tmp_path / "hc.jsonl"))
        assert {n.id for n in back.nodes.values() if n.frozen} == {n.id for n in Y.nodes.values() if n.frozen}

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "polytope"}\n', encoding="utf-8")
        with pytest.raises(ExportError):
            read_tessellation_jsonl(path)

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"type": "header", "schema": 7}\n', encoding="utf-8")
        with pytest.raises(ExportError):
            read_tessellation_jsonl(path)


class TestEnsembleFiles:
    def test_round_trip(self, stit_2d, iso2, tmp_path):
        ens = window_census(stit_2d, ConvexPolytope.box([2.0, 2.0], [8.0, 8.0]))
        path = write_ensemble_jsonl(ens, tmp_path / "cells.jsonl", iso2)
        back = read_ensemble_jsonl(path)
        assert len(back) == len(ens)
        assert back.provenance == "window_census"
        first = json.loads(path.read_text(encoding="utf-8").splitlines()[1])
        assert first["hit_mass"] == pytest.approx(iso2.hit_mass(ens.samples[0].body))
        assert first["center_rule"] == "barycenter"

    def test_sample_count_mismatch(self, stit_2d, iso2, tmp_path):
        ens = window_census(stit_2d, ConvexPolytope.box([2.0, 2.0], [8.0, 8.0]))
        path = write_ensemble_jsonl(ens, tmp_path / "cells.jsonl", iso2)
        lines = path.read_text(encoding="utf-8").splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        with pytest.raises(ExportError):
            read_ensemble_jsonl(path)


class TestTables:
    def test_csv_is_reproducible(self, tmp_path):
        frame = pd.DataFrame({"quantity": ["L_A"], "estimate": [1.0 / 3.0]})
        a = write_frame(frame, tmp_path / "a.csv").read_bytes()
        b = write_frame(frame, tmp_path / "b.csv").read_bytes()
        assert a == b
        assert b"0.333333333333" in a


class TestSvg:
    def test_one_line_per_segment(self, stit_2d, tmp_path):
        path = write_svg(stit_2d, tmp_path / "y.svg")
        root = ET.parse(path).getroot()
        lines = root.findall(".//{http://www.w3.org/2000/svg}line")
        assert len(lines) == stit_2d.split_count()

    def test_spatial_rejected(self, stit_3d, tmp_path):
        with pytest.raises(ValueError):
            write_svg(stit_3d, tmp_path / "y.svg")
