import numpy as np
import pytest
from scipy import linalg as sla

from shapeforge.codec import CodecSpec, encode, roundtrip
from shapeforge.corpus import Dataset, build_dataset, coarsen
from shapeforge.flow import make_schedule
from shapeforge.geometry import OccupancyGrid, scene_surface_sample, voxelize
from shapeforge.guidance import normalize_to_unit_cube
from shapeforge.metrics import (
    MetricError,
    chamfer,
    frechet_distance,
    latent_features,
    surface_cell_centers,
    sweep_tau,
    voxel_iou,
)
from shapeforge.nets import StructureNet
from shapeforge.training import TrainConfig, train


def brute_force_chamfer(a, b):
    d = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return float(np.mean(d.min(axis=1)) + np.mean(d.min(axis=0)))


class TestChamfer:
    def test_identical_sets(self):
        pts = np.random.default_rng(0).uniform(size=(50, 3))
        assert chamfer(pts, pts) == 0.0

    def test_unit_separation(self):
        assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == pytest.approx(2.0, abs=1e-15)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(40, 3)), rng.uniform(size=(60, 3))
        assert chamfer(a, b) == chamfer(b, a)

    def test_matches_bruteforce_exactly(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.uniform(size=(100, 3))
            b = rng.uniform(size=(100, 3))
            assert chamfer(a, b) == brute_force_chamfer(a, b)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            chamfer(np.zeros((0, 3)), np.zeros((4, 3)))


class TestVoxelIoU:
    def grid(self, coords, r=8):
        cells = np.zeros((r, r, r), dtype=np.uint8)
        for c in coords:
            cells[c] = 1
        return OccupancyGrid(cells)

    def test_identical(self):
        g = self.grid([(0, 0, 0), (1, 1, 1)])
        assert voxel_iou(g, g) == 1.0

    def test_disjoint(self):
        assert voxel_iou(self.grid([(0, 0, 0)]), self.grid([(1, 0, 0)])) == 0.0

    def test_half_overlap_one_third(self):
        a = self.grid([(0, 0, 0), (1, 0, 0)])
        b = self.grid([(1, 0, 0), (2, 0, 0)])
        assert voxel_iou(a, b) == pytest.approx(1 / 3)

    def test_both_empty_defined_as_one(self):
        empty = OccupancyGrid(np.zeros((8, 8, 8), dtype=np.uint8))
        assert voxel_iou(empty, empty) == 1.0

    def test_resolution_mismatch(self):
        with pytest.raises(MetricError):
            voxel_iou(self.grid([(0, 0, 0)]), self.grid([(0, 0, 0)], r=16))


class TestFrechet:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(3).standard_normal((64, 5))
        assert abs(frechet_distance(x, x)) < 1e-8

    def test_mean_shift_only(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((200, 4))
        v = np.array([1.0, -2.0, 0.5, 3.0])
        assert frechet_distance(x, x + v) == pytest.approx(float(v @ v), rel=1e-9)

    def test_matches_scipy_sqrtm_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.standard_normal((120, 2)) @ rng.standard_normal((2, 2)) + rng.standard_normal(2)
            y = rng.standard_normal((150, 2)) @ rng.standard_normal((2, 2)) + rng.standard_normal(2)
            mu_x, mu_y = x.mean(0), y.mean(0)
            cov_x = np.cov(x, rowvar=False) + 1e-6 * np.eye(2)
            cov_y = np.cov(y, rowvar=False) + 1e-6 * np.eye(2)
            cross = sla.sqrtm(cov_x @ cov_y)
            expected = float((mu_x - mu_y) @ (mu_x - mu_y) + np.trace(cov_x + cov_y - 2 * np.real(cross)))
            assert frechet_distance(x, y) == pytest.approx(expected, abs=1e-8)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 3))
        y = rng.standard_normal((100, 3)) * 1.5 + 0.3
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert frechet_distance(x @ q, y @ q) == pytest.approx(frechet_distance(x, y), abs=1e-6)

    def test_too_few_samples(self):
        with pytest.raises(MetricError):
            frechet_distance(np.zeros((3, 5)), np.zeros((10, 5)))

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((30, 2))
        y = rng.standard_normal((40, 2)) + 5
        assert frechet_distance(x, y) >= 0


class TestSurfaceCells:
    def test_matches_neighbor_scan(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            cells = (rng.uniform(size=(12, 12, 12)) < 0.3).astype(np.uint8)
            grid = OccupancyGrid(cells)
            centers = surface_cell_centers(grid)
            expected = []
            for x, y, z in np.argwhere(cells):
                exposed = False
                for dx, dy, dz in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
                    nx, ny, nz = x + dx, y + dy, z + dz
                    if not (0 <= nx < 12 and 0 <= ny < 12 and 0 <= nz < 12) or cells[nx, ny, nz] == 0:
                        exposed = True
                        break
                if exposed:
                    expected.append(((x + 0.5) / 12, (y + 0.5) / 12, (z + 0.5) / 12))
            np.testing.assert_allclose(centers, np.asarray(expected), atol=1e-15)


@pytest.fixture(scope="module")
def sweep_setup(tmp_path_factory):
    """Coarse-patch codec (64-dim features) plus a hand-biased field whose
    unguided samples always decode non-empty; exercises sweep mechanics
    without depending on training quality."""
    from shapeforge.training import Checkpoint

    root = tmp_path_factory.mktemp("sweep_ds")
    build_dataset(root, n_per_category=110, seed=2, resolution=32)
    ds = Dataset(root)
    spec = CodecSpec(resolution=32, patch=8, channels=8)
    sched = make_schedule(10, 3.0)
    net = StructureNet(spec.latent_dim, ds.vocab, hidden=32, depth=2, seed=0, dtype=np.float32)
    for name in net.params:
        net.params[name][:] = 0.0
    # constant velocity -4 on every DC coefficient: integrating from noise
    # adds +4, pushing each patch mean above the decode threshold
    dc = np.arange(0, spec.latent_dim, spec.channels)
    net.params["b_out"][dc] = -4.0
    ckpt = Checkpoint(
        kind="structure",
        dims=net.dims(),
        vocab=ds.vocab,
        schedule=sched,
        codec=spec,
        train_config=TrainConfig(iterations=1),
        params={k: v.copy() for k, v in net.params.items()},
    )
    return ckpt, ds, spec, sched


class TestSweep:
    def test_report_structure_and_determinism(self, sweep_setup):
        ckpt, ds, spec, sched = sweep_setup
        report = sweep_tau(ckpt, ds, [10, 0], seeds=[0, 1], n_controls=33)
        assert [row["tau0"] for row in report.rows] == [0, 10]  # sorted
        assert all(row["n"] == 66 for row in report.rows)
        csv_text = report.to_csv()
        assert csv_text.splitlines()[0] == "tau0,t0,cd_e3,iou,frechet,n"
        assert len(csv_text.splitlines()) == 3
        again = sweep_tau(ckpt, ds, [10, 0], seeds=[0, 1], n_controls=33)
        assert report.to_json() == again.to_json()

    def test_zero_step_row_equals_codec_roundtrip_cd(self, sweep_setup):
        ckpt, ds, spec, sched = sweep_setup
        report = sweep_tau(ckpt, ds, [sched.steps], seeds=[0, 1], n_controls=33)
        row = report.rows[0]
        cds = []
        for item_id in ds.ids("val")[:33]:
            coarse, _ = normalize_to_unit_cube(coarsen(ds.load_scene(item_id)))
            grid = voxelize(coarse, spec.resolution)
            rt = roundtrip(grid, spec)
            pts = scene_surface_sample(coarse, 512, seed=item_id)
            cds.append(chamfer(pts, surface_cell_centers(rt)) * 1e3)
        assert row["cd_e3"] == pytest.approx(float(np.mean(cds)), rel=1e-12)
        assert row["t0"] == 0.0

    def test_needs_enough_controls(self, sweep_setup):
        ckpt, ds, *_ = sweep_setup
        with pytest.raises(MetricError):
            sweep_tau(ckpt, ds, [0], seeds=[0], n_controls=8)

    def test_frechet_sample_requirement_enforced(self, sweep_setup):
        ckpt, ds, *_ = sweep_setup
        with pytest.raises(MetricError, match="Frechet"):
            sweep_tau(ckpt, ds, [0], seeds=[0], n_controls=33)

    def test_latent_features_shape(self, sweep_setup):
        _, ds, spec, _ = sweep_setup
        feats = latent_features(ds.grids("val")[:4], spec)
        assert feats.shape == (4, spec.grid_size**3)
