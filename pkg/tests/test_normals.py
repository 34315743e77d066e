from __future__ import annotations

import numpy as np
import pytest

from poseverify.geometry import Intrinsics
from poseverify.normals import NormalMap, normal_similarity, normals_from_depth

K = Intrinsics(50.0, 50.0, 24.5, 19.5, 50, 40)


def plane_depth(n, d0, k=K):
    """Depth of the plane n . X = d0 along each pixel ray."""
    u, v = np.meshgrid(np.arange(k.width), np.arange(k.height))
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u, dtype=float)], axis=-1)
    return d0 / (rays @ np.asarray(n, dtype=float))


def angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(np.einsum("...i,...i->...", a, b), -1, 1)))


class TestNormalsFromDepth:
    def test_fronto_parallel(self):
        nm = normals_from_depth(np.full((40, 50), 2.0), K)
        assert nm.validity.all()
        np.testing.assert_allclose(nm.grid[2:-2, 2:-2], np.broadcast_to([0, 0, -1], (36, 46, 3)), atol=1e-9)

    @pytest.mark.parametrize("tilt", [(0.3, 0.0), (0.0, -0.5), (0.4, 0.4)])
    def test_slanted_plane(self, tilt):
        n = np.array([tilt[0], tilt[1], -1.0])
        n /= np.linalg.norm(n)
        nm = normals_from_depth(plane_depth(n, -2.0), K)
        inner = nm.grid[2:-2, 2:-2]
        assert nm.validity[2:-2, 2:-2].all()
        assert angle_deg(inner, n).max() <= 2.0

    def test_unit_and_camera_facing(self, rng):
        depth = 2.0 + 0.2 * rng.uniform(size=(40, 50))
        nm = normals_from_depth(depth, K)
        v = nm.validity
        np.testing.assert_allclose(np.linalg.norm(nm.grid[v], axis=-1), 1.0, atol=1e-6)
        u, w = np.meshgrid(np.arange(50), np.arange(40))
        rays = np.stack([(u - K.cx) / K.fx, (w - K.cy) / K.fy, np.ones((40, 50))], axis=-1)
        assert (np.einsum("hwi,hwi->hw", nm.grid, rays)[v] <= 1e-12).all()

    def test_hole_invalid(self):
        depth = np.full((40, 50), 2.0)
        depth[10:20, 10:20] = 0.0
        nm = normals_from_depth(depth, K)
        assert not nm.validity[10:20, 10:20].any()
        # center of a 5x5 window with only 5 valid neighbours
        d = np.zeros((40, 50))
        d[20, 20:25] = 2.0
        assert not normals_from_depth(d, K).validity.any()

    def test_bad_window(self):
        with pytest.raises(ValueError):
            normals_from_depth(np.ones((5, 5)), K, window=4)


class TestNormalSimilarity:
    def _map(self, v, shape=(3, 4)):
        return NormalMap.from_array(np.broadcast_to(np.asarray(v, float), shape + (3,)))

    def test_identical(self):
        s = normal_similarity(self._map([0, 0.6, -0.8]), self._map([0, 0.6, -0.8]))
        np.testing.assert_allclose(s.scores, 1.0)

    def test_negated(self):
        s = normal_similarity(self._map([0, 0, -1]), self._map([0, 0, 1]))
        np.testing.assert_allclose(s.scores, -1.0)

    def test_perpendicular(self):
        s = normal_similarity(self._map([0, 0, -1]), self._map([1, 0, 0]))
        np.testing.assert_allclose(s.scores, 0.0, atol=1e-15)

    def test_invalid_propagates(self):
        g = np.broadcast_to([0.0, 0.0, -1.0], (3, 4, 3)).copy()
        g[1, 1] = 0.0
        s = normal_similarity(NormalMap.from_array(g), self._map([0, 0, -1]))
        assert not s.validity[1, 1] and s.validity.sum() == 11

    def test_from_array_normalises(self):
        m = NormalMap.from_array([[[0.0, 0.0, -3.0], [np.nan, 0, 0]]])
        np.testing.assert_allclose(m.grid[0, 0], [0, 0, -1])
        assert m.validity.tolist() == [[True, False]]
