import numpy as np
import pytest

from shapeforge.appearance import (
    AppearanceError,
    AppearanceNet,
    LocalConditioning,
    assign_local_tokens,
    attach_noise,
    build_adjacency,
    build_appearance_net,
    color_targets,
    dump_mesh,
    export_obj,
    exposed_faces,
    extract_surface,
    generate_appearance,
    load_mesh_dump,
    positional_features,
    prepare_appearance_sample,
    train_appearance,
)
from shapeforge.codec import CodecSpec
from shapeforge.corpus import CATEGORY_SPECS, sample_shape
from shapeforge.flow import make_schedule
from shapeforge.geometry import ControlScene, OccupancyGrid, Superquadric, surface_sample
from shapeforge.training import TrainConfig

SCHED = make_schedule(25, 3.0)


def grid_from(coords, r=8):
    cells = np.zeros((r, r, r), dtype=np.uint8)
    for c in coords:
        cells[c] = 1
    return OccupancyGrid(cells)


class TestAttachNoise:
    def test_single_voxel(self):
        lat = attach_noise(grid_from([(3, 3, 3)]), seed=0)
        assert lat.count == 1
        assert lat.features.shape == (1, 8)

    def test_deterministic(self):
        grid = grid_from([(1, 1, 1), (2, 2, 2), (3, 1, 0)])
        a = attach_noise(grid, seed=5)
        b = attach_noise(grid, seed=5)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_canonical_order(self):
        grid = grid_from([(5, 0, 0), (0, 5, 0), (0, 0, 5)])
        lat = attach_noise(grid, seed=0)
        np.testing.assert_array_equal(lat.coords, [[0, 0, 5], [0, 5, 0], [5, 0, 0]])

    def test_empty_structure_rejected(self):
        with pytest.raises(AppearanceError):
            attach_noise(OccupancyGrid(np.zeros((8, 8, 8), dtype=np.uint8)), seed=0)

    def test_standard_normal_statistics(self):
        rng = np.random.default_rng(0)
        cells = (rng.uniform(size=(32, 32, 32)) < 0.4).astype(np.uint8)
        lat = attach_noise(OccupancyGrid(cells), seed=1)
        assert lat.count > 10_000
        bound = 4.0 / np.sqrt(lat.count)
        assert np.all(np.abs(lat.features.mean(axis=0)) < bound)


class TestAdjacency:
    def test_counts_match_bruteforce(self):
        rng = np.random.default_rng(1)
        cells = (rng.uniform(size=(10, 10, 10)) < 0.3).astype(np.uint8)
        grid = OccupancyGrid(cells)
        coords = grid.occupied_indices()
        edges, counts = build_adjacency(coords, 10)
        lookup = {tuple(c): i for i, c in enumerate(coords)}
        for i, (x, y, z) in enumerate(coords):
            expected = sum(
                (x + dx, y + dy, z + dz) in lookup
                for dx, dy, dz in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            )
            assert counts[i] == expected


class TestBlendedCrossAttention:
    def setup_method(self):
        self.net = AppearanceNet(vocab=9, seed=0, hidden=32)
        rng = np.random.default_rng(2)
        self.hidden = rng.standard_normal((12, 32))
        self.pos = positional_features(np.arange(36).reshape(12, 3) % 8, 8)

    def test_all_local_equal_global_reduces_exactly(self):
        same = LocalConditioning(global_token=1, local_tokens=np.full(12, 1))
        pure = LocalConditioning(global_token=1, local_tokens=None)
        a = self.net.cross_attention_delta(0, self.hidden, self.pos, same)
        b = self.net.cross_attention_delta(0, self.hidden, self.pos, pure)
        assert np.array_equal(a, b)

    def test_disabled_locals_is_global_only(self):
        cond = LocalConditioning(global_token=4, local_tokens=None)
        out = self.net.cross_attention_delta(1, self.hidden, self.pos, cond)
        assert out.shape == (12, 32)

    def test_swapped_tokens_swap_outputs(self):
        hidden = np.tile(self.hidden[0], (2, 1))
        pos = np.tile(self.pos[0], (2, 1))
        ab = LocalConditioning(global_token=0, local_tokens=np.array([3, 5]))
        ba = LocalConditioning(global_token=0, local_tokens=np.array([5, 3]))
        out_ab = self.net.cross_attention_delta(0, hidden, pos, ab)
        out_ba = self.net.cross_attention_delta(0, hidden, pos, ba)
        np.testing.assert_array_equal(out_ab[0], out_ba[1])
        np.testing.assert_array_equal(out_ab[1], out_ba[0])

    def test_unknown_token_rejected(self):
        cond = LocalConditioning(global_token=99, local_tokens=None)
        with pytest.raises(AppearanceError):
            self.net.cross_attention_delta(0, self.hidden, self.pos, cond)


class TestAssignLocalTokens:
    def test_single_primitive(self):
        scene = ControlScene(
            primitives=(Superquadric((0.3, 0.3, 0.3), (1, 1), (0.5, 0.5, 0.5)),),
            local_labels=(7,),
        )
        grid = grid_from([(4, 4, 4), (2, 4, 4)])
        np.testing.assert_array_equal(assign_local_tokens(grid, scene), [7, 7])

    def test_center_voxel_gets_owner(self):
        scene = ControlScene(
            primitives=(
                Superquadric((0.2, 0.2, 0.2), (1, 1), (0.25, 0.5, 0.5)),
                Superquadric((0.2, 0.2, 0.2), (1, 1), (0.75, 0.5, 0.5)),
            ),
            local_labels=(3, 5),
        )
        grid = grid_from([(2, 4, 4), (6, 4, 4)], r=8)  # centers 0.3125 and 0.8125
        np.testing.assert_array_equal(assign_local_tokens(grid, scene), [3, 5])

    def test_agrees_with_surface_sample_oracle(self):
        rng = np.random.default_rng(3)
        prims = tuple(
            Superquadric(
                scale=tuple(rng.uniform(0.08, 0.2, 3)),
                exponents=tuple(rng.uniform(0.3, 1.7, 2)),
                translation=tuple(rng.uniform(0.25, 0.75, 3)),
            )
            for _ in range(3)
        )
        scene = ControlScene(primitives=prims, local_labels=(3, 4, 5))
        cells = (rng.uniform(size=(16, 16, 16)) < 0.2).astype(np.uint8)
        cells[0, 0, 0] = 1
        grid = OccupancyGrid(cells)
        assigned = assign_local_tokens(grid, scene)
        centers = grid.occupied_centers()
        clouds = [surface_sample(q, 4000, seed=i) for i, q in enumerate(prims)]
        agree = 0
        for i, p in enumerate(centers):
            dists = [np.min(np.linalg.norm(cloud - p, axis=1)) for cloud in clouds]
            agree += assigned[i] == scene.local_labels[int(np.argmin(dists))]
        assert agree / len(centers) >= 0.9  # proxy vs true surface distance

    def test_requires_labels(self):
        scene = ControlScene(primitives=(Superquadric((0.3, 0.3, 0.3), (1, 1), (0.5, 0.5, 0.5)),))
        with pytest.raises(AppearanceError):
            assign_local_tokens(grid_from([(4, 4, 4)]), scene)


class TestSurfaceExtraction:
    def test_single_voxel(self):
        verts, faces, _ = extract_surface(grid_from([(4, 4, 4)]))
        assert len(faces) == 12
        assert len(verts) == 8

    def test_bar_two_voxels(self):
        verts, faces, _ = extract_surface(grid_from([(3, 4, 4), (4, 4, 4)]))
        assert len(faces) == 20

    def test_face_count_matches_neighbor_scan(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            cells = (rng.uniform(size=(10, 10, 10)) < 0.35).astype(np.uint8)
            if cells.sum() == 0:
                continue
            grid = OccupancyGrid(cells)
            _, faces, _ = extract_surface(grid)
            assert len(faces) == 2 * exposed_faces(grid)

    def test_vertices_on_lattice(self):
        rng = np.random.default_rng(5)
        cells = (rng.uniform(size=(8, 8, 8)) < 0.3).astype(np.uint8)
        cells[0, 0, 0] = 1
        verts, _, _ = extract_surface(OccupancyGrid(cells))
        np.testing.assert_allclose(verts * 8, np.round(verts * 8), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(AppearanceError):
            extract_surface(OccupancyGrid(np.zeros((8, 8, 8), dtype=np.uint8)))

    def test_colored_obj_export(self):
        grid = grid_from([(4, 4, 4)])
        verts, faces, vcolors = extract_surface(grid, colors=np.array([[1.0, 0.0, 0.2]]))
        text = export_obj(verts, faces, vcolors)
        first = text.splitlines()[0].split()
        assert first[0] == "v" and len(first) == 7
        assert text.count("\nf ") + text.startswith("f ") == 12

    def test_mesh_dump_round_trip(self):
        grid = grid_from([(4, 4, 4), (4, 5, 4)])
        verts, faces, vcolors = extract_surface(grid, colors=np.array([[1, 0, 0], [0, 1, 0]], dtype=float))
        blob = dump_mesh(verts, faces, vcolors)
        v2, f2, c2 = load_mesh_dump(blob)
        np.testing.assert_allclose(v2, verts, atol=1e-7)
        np.testing.assert_array_equal(f2, faces)
        assert c2.shape == (len(verts), 3)


class TestAppearanceGeneration:
    def make_net(self):
        return AppearanceNet(vocab=9, seed=3, hidden=32)

    def test_deterministic(self):
        grid = grid_from([(2, 2, 2), (2, 3, 2), (3, 2, 2)])
        cond = LocalConditioning(global_token=2, local_tokens=None)
        net = self.make_net()
        a = generate_appearance(grid, net, cond, seed=4, schedule=SCHED)
        b = generate_appearance(grid, net, cond, seed=4, schedule=SCHED)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, 3)
        assert np.all((a >= 0) & (a <= 1))

    def test_depends_only_on_occupied_set(self):
        coords = [(1, 1, 1), (5, 5, 5)]
        a = generate_appearance(grid_from(coords), self.make_net(), LocalConditioning(0), 7, SCHED)
        rebuilt = OccupancyGrid(grid_from(coords).cells.copy())
        b = generate_appearance(rebuilt, self.make_net(), LocalConditioning(0), 7, SCHED)
        np.testing.assert_array_equal(a, b)

    def test_color_targets_invert_squash(self):
        rgb = np.array([[0.8, 0.1, 0.5]])
        feats = color_targets(rgb)
        back = 1.0 / (1.0 + np.exp(-feats[:, :3]))
        np.testing.assert_allclose(back, rgb, atol=1e-9)
        np.testing.assert_array_equal(feats[:, 3:], 0.0)


class TestTrainAppearance:
    def test_loss_decreases_and_reproducible(self):
        spec = CodecSpec()
        samples = []
        for i, cat in enumerate(("chair", "rocket")):
            s = sample_shape(CATEGORY_SPECS[cat], seed=i)
            samples.append(prepare_appearance_sample(s.grid, s.colors, s.scene, s.label))
        cfg = TrainConfig(iterations=30, batch_size=2, seed=0, learning_rate=3e-3)
        curves = []
        for _ in range(2):
            net = AppearanceNet(vocab=9, seed=1, hidden=32)
            ckpt = train_appearance(net, samples, cfg, spec, SCHED, max_voxels=96)
            curves.append(ckpt.loss_curve)
        np.testing.assert_array_equal(curves[0], curves[1])
        assert np.mean(curves[0][-5:]) < curves[0][0]

    def test_checkpoint_rebuild(self, tmp_path):
        spec = CodecSpec()
        s = sample_shape(CATEGORY_SPECS["table"], seed=0)
        samples = [prepare_appearance_sample(s.grid, s.colors, s.scene, s.label)]
        net = AppearanceNet(vocab=9, seed=2, hidden=32)
        cfg = TrainConfig(iterations=5, batch_size=1, seed=0)
        ckpt = train_appearance(net, samples, cfg, spec, SCHED, max_voxels=64)
        path = tmp_path / "app.ckpt"
        ckpt.save(path)
        from shapeforge.training import Checkpoint

        rebuilt = build_appearance_net(Checkpoint.load(path))
        grid = grid_from([(2, 2, 2)])
        cond = LocalConditioning(global_token=1)
        a = generate_appearance(grid, rebuilt, cond, 0, SCHED)
        assert a.shape == (1, 3)


class TestAppearanceNetGradients:
    def test_gradcheck(self):
        rng = np.random.default_rng(6)
        grid = grid_from([(1, 1, 1), (1, 2, 1), (2, 1, 1), (5, 5, 5)])
        lat = attach_noise(grid, seed=0)
        pos = positional_features(lat.coords, 8)
        edges, counts = build_adjacency(lat.coords, 8)
        net = AppearanceNet(vocab=9, seed=7, hidden=16)
        cond = LocalConditioning(global_token=0, local_tokens=np.array([3, 4, 3, 5]))
        t = 0.45
        s0 = rng.standard_normal((4, 8))
        eps = rng.standard_normal((4, 8))
        st = (1 - t) * s0 + t * eps
        target = eps - s0
        pred, cache = net.forward(st, pos, t, cond, edges, counts, want_cache=True)
        resid = pred - target
        dy = (2.0 / resid.size) * resid
        grads = net.backward(cache, dy, edges, counts)
        names = sorted(net.params)
        h = 1e-5
        for _ in range(50):
            name = names[rng.integers(len(names))]
            idx = np.unravel_index(rng.integers(net.params[name].size), net.params[name].shape)
            orig = net.params[name][idx]

            def loss_at(value):
                net.params[name][idx] = value
                out = net.forward(st, pos, t, cond, edges, counts)
                net.params[name][idx] = orig
                return float(np.mean((out - target) ** 2))

            fd = (loss_at(orig + h) - loss_at(orig - h)) / (2 * h)
            an = grads[name][idx]
            assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-8), f"{name}{idx}"
