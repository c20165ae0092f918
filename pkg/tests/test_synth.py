from __future__ import annotations

import json

import numpy as np
import pytest
from scipy import ndimage, stats

from sodkit import synth as sy
from sodkit.morphology import boundary_band


class TestSpec:
    @pytest.mark.parametrize("kw", [{"shape_kind": "star"}, {"contrast": 1.5}, {"noise_sigma": 0.6},
                                    {"size": 8}, {"texture_period": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            sy.SceneSpec(**kw)

    def test_template(self):
        with pytest.raises(ValueError):
            sy.SetTemplate(kind_probs={"blob": 0.0})
        with pytest.raises(ValueError):
            sy.SetTemplate(kind_probs={"cube": 1.0})


class TestGenerate:
    def test_deterministic(self):
        spec = sy.SceneSpec(seed=42, shape_kind="ring")
        (a, ga), (b, gb) = sy.generate(spec), sy.generate(spec)
        assert a.tobytes() == b.tobytes() and ga.tobytes() == gb.tobytes()
        c, _ = sy.generate(sy.SceneSpec(seed=43, shape_kind="ring"))
        assert not np.array_equal(a, c)

    def test_ranges_and_shapes(self):
        for kind in sy.SHAPE_KINDS:
            img, gt = sy.generate(sy.SceneSpec(seed=7, shape_kind=kind, size=48))
            assert img.shape == (3, 48, 48) and gt.shape == (48, 48)
            assert img.min() >= 0 and img.max() <= 1
            assert gt.dtype == np.uint8 and set(np.unique(gt)) == {0, 1}

    def test_contrast_gap(self):
        gaps = []
        for seed in range(200):
            spec = sy.SceneSpec(seed=seed, shape_kind=sy.SHAPE_KINDS[seed % 4], contrast=1.0, noise_sigma=0.0)
            img, gt = sy.generate(spec)
            y = img.mean(axis=0)
            gaps.append(y[gt == 1].mean() - y[gt == 0].mean())
        assert min(gaps) >= 0.3

    def test_area_and_connectivity(self):
        for seed in range(1000):
            kind = sy.SHAPE_KINDS[seed % 4]
            _, gt = sy.generate(sy.SceneSpec(seed=seed, shape_kind=kind, noise_sigma=0.0))
            assert 0.05 <= gt.mean() <= 0.6
            if kind != "multi" and seed % 10 == 0:
                assert ndimage.label(gt)[1] == 1

    def test_band_nonempty(self):
        for seed in range(40):
            _, gt = sy.generate(sy.SceneSpec(seed=seed, size=32, shape_kind=sy.SHAPE_KINDS[seed % 4]))
            assert boundary_band(gt, 10).any()

    def test_multi_has_components(self):
        counts = [ndimage.label(sy.generate(sy.SceneSpec(seed=s, shape_kind="multi"))[1])[1] for s in range(20)]
        assert max(counts) >= 2


class TestSets:
    def test_count_and_manifest(self, tmp_path):
        manifest = sy.generate_set(5, 9, sy.SetTemplate(), tmp_path)
        pngs = sorted(p.name for p in tmp_path.glob("*.png"))
        assert len(pngs) == 10 and (tmp_path / "manifest.json").exists()
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == json.loads(json.dumps(manifest))
        assert on_disk["version"] == 1 and [it["index"] for it in on_disk["items"]] == list(range(5))

    def test_regeneration_hash(self, tmp_path):
        a = sy.generate_set(4, 3, sy.SetTemplate(), tmp_path / "a")
        b = sy.generate_set(4, 3, sy.SetTemplate(), tmp_path / "b", threads=3)
        assert sy.manifest_hash(a) == sy.manifest_hash(b)
        for name in ("img_0002.png", "gt_0003.png"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert sy.manifest_hash(sy.generate_set(4, 4, sy.SetTemplate(), tmp_path / "c")) != sy.manifest_hash(a)

    def test_items_regenerate_independently(self):
        tmpl = sy.SetTemplate()
        items = sy.generate_items(6, 21, tmpl)
        alone = sy.generate(sy.sample_spec(tmpl, 21, 4))
        np.testing.assert_array_equal(items[4][0], alone[0])

    def test_kind_distribution(self):
        probs = {"blob": 0.4, "ring": 0.3, "bar": 0.2, "multi": 0.1}
        tmpl = sy.SetTemplate(kind_probs=probs)
        kinds = [sy.sample_spec(tmpl, 77, i).shape_kind for i in range(1000)]
        observed = [kinds.count(k) for k in sy.SHAPE_KINDS]
        expected = [1000 * probs[k] for k in sy.SHAPE_KINDS]
        assert stats.chisquare(observed, expected).pvalue > 0.01

    def test_zero_count(self, tmp_path):
        with pytest.raises(ValueError):
            sy.generate_set(0, 1, sy.SetTemplate(), tmp_path)
