import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import scene_graph
from oracles import surface_lookup
from hams.body import build_template, skin_body, vertex_normals
from hams.errors import ConfigInvalid, IndexOutOfRange
from hams.geometry import Camera, Sim3, image_center
from hams.oracle import (NoiseSpec, Rect, SceneConfig, SceneTruth, _intersect_mesh,
                         _intersect_mesh_projected, descriptor_field, generate_scene,
                         make_pair_prediction, render_all, render_view)

T = build_template()


# scene generation -----------------------------------------------------------

def test_generation_is_deterministic():
    a = generate_scene(seed=1)
    b = generate_scene(seed=1)
    assert a.content_hash() == b.content_hash()
    assert generate_scene(seed=2).content_hash() != a.content_hash()


def test_five_people_per_scene():
    s = generate_scene(seed=3, persons=(5, 5))
    assert len(s.people) == 5
    assert sorted(g for _, g in s.people) == [1, 2, 3, 4, 5]


def test_default_person_count_is_around_five():
    counts = [len(generate_scene(seed=k).people) for k in range(10)]
    assert set(counts) <= {4, 5, 6}


def test_config_preconditions():
    with pytest.raises(ConfigInvalid):
        generate_scene(cameras=1)
    generate_scene(cameras=1, monocular=True)
    with pytest.raises(ConfigInvalid):
        generate_scene(persons=(3, 2))
    with pytest.raises(ConfigInvalid):
        generate_scene(room_width=(5.0, 4.0))
    with pytest.raises(ConfigInvalid):
        NoiseSpec(confidence_corruption=1.5)
    with pytest.raises(ConfigInvalid):
        NoiseSpec(depth_sigma=-0.1)


def test_people_inside_room_and_cameras_look_inward():
    for seed in range(5):
        s = generate_scene(seed=seed)
        floor = s.room[0]
        half = np.array([abs(floor.half_u[0]), abs(floor.half_v[2])])
        for p, _ in s.people:
            xz = p.root.translation[[0, 2]]
            assert np.all(np.abs(xz) < half)
        for c in s.cameras:
            fwd = c.pose.rotation[:, 2]
            assert fwd @ (np.array([0, 0.8, 0]) - c.center) > 0


# rendering ------------------------------------------------------------------

def _floor_only_scene():
    floor = Rect(np.zeros(3), np.array([50.0, 0, 0]), np.array([0, 0, 50.0]), (100, 100, 100))
    # camera 2 m above the floor looking straight down: z axis = -y world
    R = np.stack([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]], axis=1)
    cam = Camera(Sim3(1.0, R, np.array([0, 2.0, 0])), 60.0, image_center(40, 30), 40, 30)
    cfg = SceneConfig(persons=(0, 0), cameras=1, width=40, height=30, monocular=True)
    return SceneTruth([floor], [], [cam], cfg, 0)


def test_floor_plane_render():
    s = _floor_only_scene()
    v = render_view(s, 0)
    assert np.abs(v.world_points[..., 1]).max() < 1e-12
    # depth along the optical axis equals the camera height
    assert np.allclose(v.depth, 2.0, atol=1e-12)
    assert not v.silhouette.any()


@pytest.fixture(scope="module")
def views():
    scene, _, views = scene_graph(0, 4, (3, 3))
    return scene, views


def test_depth_equals_pointmap_z(views):
    _, vs = views
    for v in vs:
        assert np.array_equal(v.depth, v.pointmap[..., 2])


def test_back_projection_matches_pointmap(views):
    scene, vs = views
    for v in vs:
        cam = scene.cameras[v.camera_index]
        H, W = v.depth.shape
        vv, uu = np.mgrid[0:H, 0:W].astype(float)
        cx, cy = (W - 1) / 2, (H - 1) / 2
        X = np.stack([(uu - cx) / cam.focal, (vv - cy) / cam.focal, np.ones_like(uu)], -1) * v.depth[..., None]
        assert np.abs(X - v.pointmap).max() < 1e-6
        world = X @ cam.pose.rotation.T + cam.pose.translation
        assert np.abs(world - v.world_points).max() < 1e-6


def test_room_pixels_lie_on_their_wall(views):
    scene, vs = views
    v = vs[1]
    pts = v.world_points[~v.silhouette]
    dist = np.min([np.abs((pts - r.center) @ r.normal) for r in scene.room], axis=0)
    assert dist.max() < 1e-6


def test_person_pixels_lie_on_shell(views):
    scene, vs = views
    v = vs[0]
    margin = scene.config.silhouette_margin
    for params, gid in scene.people:
        mask = v.instance == gid
        if not mask.any():
            continue
        V, _ = skin_body(T, params)
        shell = V + margin * vertex_normals(V, T.triangles)
        dist, _, _ = surface_lookup(v.world_points[mask], shell[T.triangles])
        assert dist.max() < 1e-6


def test_densepose_is_the_canonical_surface_coordinate():
    # without the shell the visible surface is the body itself, so the rendered
    # canonical coordinate must equal the barycentric transfer to the template
    scene = generate_scene(seed=4, cameras=3, persons=(2, 2), silhouette_margin=0.0)
    vs = render_all(scene)
    checked = 0
    for v in vs[:2]:
        for params, gid in scene.people:
            mask = v.valid & (v.instance == gid)
            if not mask.any():
                continue
            V, _ = skin_body(T, params)
            dist, face, bary = surface_lookup(v.world_points[mask], V[T.triangles])
            assert dist.max() < 1e-6
            canon = np.einsum("nk,nkc->nc", bary, T.vertices[T.triangles[face]])
            assert np.abs(T.normalize(canon) - v.densepose[mask]).max() < 1e-4
            checked += mask.sum()
    assert checked > 100


def test_densepose_masks(views):
    _, vs = views
    for v in vs:
        assert not v.densepose[~v.valid].any()
        assert not (v.valid & ~v.silhouette).any()
        assert v.densepose.min() >= 0 and v.densepose.max() <= 1


def test_projected_casting_matches_brute_force(views):
    scene, _ = views
    cam = scene.cameras[2]
    params, _ = scene.people[0]
    V, _ = skin_body(T, params)
    tris = V[T.triangles]
    dirs = cam.pixel_rays().reshape(-1, 3) @ cam.pose.rotation.T
    ta, fa, ba = _intersect_mesh(cam.center, dirs, tris)
    tb, fb, bb = _intersect_mesh_projected(cam, cam.center, dirs, tris)
    assert np.isfinite(ta).sum() > 20
    assert np.array_equal(np.isfinite(ta), np.isfinite(tb))
    hit = np.isfinite(ta)
    assert np.abs(ta[hit] - tb[hit]).max() < 1e-12
    assert (fa[hit] == fb[hit]).mean() > 0.99       # coplanar ties along shared edges may differ


def test_render_index_out_of_range(views):
    scene, _ = views
    with pytest.raises(IndexOutOfRange):
        render_view(scene, 4)


# pair predictions -----------------------------------------------------------

def test_noiseless_pair_is_exact_transform(views):
    scene, vs = views
    p = make_pair_prediction(scene, 1, 3, views=vs)
    rel = scene.cameras[1].pose.inverse() @ scene.cameras[3].pose
    assert np.array_equal(p.X0, vs[1].pointmap)
    assert np.abs(p.X1 - rel.apply(vs[3].pointmap)).max() < 1e-12
    assert np.abs(rel.inverse().apply(p.X1) - vs[3].pointmap).max() < 1e-6


def test_pair_instance_ids_dense_and_mapped(views):
    scene, vs = views
    p = make_pair_prediction(scene, 0, 2, NoiseSpec(permute_ids=True), seed=5, views=vs)
    locs = sorted((set(np.unique(p.inst0)) | set(np.unique(p.inst1))) - {0})
    assert locs == list(range(1, len(locs) + 1))
    lut = np.zeros(max(p.local_to_global) + 1, dtype=int)
    for l, g in p.local_to_global.items():
        lut[l] = g
    assert np.array_equal(lut[p.inst0], vs[0].instance)
    assert np.array_equal(lut[p.inst1], vs[2].instance)


def test_pair_is_deterministic(views):
    scene, vs = views
    noise = NoiseSpec(depth_sigma=0.02, confidence_corruption=0.1, densepose_sigma=0.05, permute_ids=True)
    a = make_pair_prediction(scene, 2, 1, noise, seed=9, views=vs)
    b = make_pair_prediction(scene, 2, 1, noise, seed=9, views=vs)
    for name in ("X0", "X1", "C0", "C1", "inst0", "inst1", "dp0", "dp1", "D0", "D1"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_pair_index_checks(views):
    scene, vs = views
    with pytest.raises(IndexOutOfRange):
        make_pair_prediction(scene, 0, 7, views=vs)
    with pytest.raises(IndexOutOfRange):
        make_pair_prediction(scene, 1, 1, views=vs)


def test_monocular_pair_is_duplicated():
    scene = generate_scene(seed=2, cameras=1, persons=(2, 2), monocular=True)
    p = make_pair_prediction(scene, 0, 0, NoiseSpec(depth_sigma=0.01), seed=1)
    assert np.array_equal(p.X0, p.X1)
    assert np.array_equal(p.C0, p.C1)
    assert np.array_equal(p.inst0, p.inst1)


def test_depth_noise_statistics():
    scene, graph, vs = scene_graph(0, 4, (3, 3), 0.01)
    rel = []
    for key in graph.keys:
        p = graph.edges[key]
        z = vs[key[0]].depth
        rel.append(((p.X0[..., 2] - z) / z).ravel())
    rel = np.concatenate(rel)
    assert rel.size >= 100_000
    assert abs(rel.std() - 0.01) < 0.001


def test_corrupted_pixels_get_floor_confidence(views):
    scene, vs = views
    p = make_pair_prediction(scene, 0, 1, NoiseSpec(confidence_corruption=0.2), seed=3, views=vs)
    assert abs((p.C0 == 1.0).mean() - 0.2) < 0.03
    assert p.C0.min() >= 1.0


# descriptors ----------------------------------------------------------------

def test_descriptors_unit_norm(rng):
    D = descriptor_field(rng.uniform(-5, 5, (100, 3)))
    assert np.allclose(np.linalg.norm(D, axis=1), 1.0)


@given(arrays(np.float64, (20, 3), elements=st.floats(-3.4, 3.4)))
def test_true_point_is_unique_best_match(pts):
    # every pair of points in a box of side 6.8 is closer than the 12 m no-wrap extent
    D = descriptor_field(pts)
    S = D @ D.T
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    for k in range(len(pts)):
        apart = dist[k] > 1e-3
        assert np.all(S[k, apart] < S[k, k])
