"""The scan / map / fit / score / select loop, metrics and run outputs."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import sensor
from .config import RunConfig, format_config
from .evaluator import EllipsoidScene, RaycastScorer, score_view
from .geometry import Ellipsoid, ViewPose
from .gmm import select_cluster_count
from .mvee import fit_cluster_ellipsoids
from .sampling import (PartitionState, admissible_candidates, admissible_partitions,
                       azimuth_of, partition_of, sample_candidates)
from .voxelmap import (FRONTIER, OCCUPIED, VoxelGrid, extract_frontiers, grow_to_cover,
                       integrate_scan, update_bounding_box)

log = logging.getLogger(__name__)

COVERAGE_RADIUS = 0.005
COVERAGE_SAMPLES = 10_000
FILTER_LEAF = 0.005
OBSERVABLE_MIN_ELEVATION = math.radians(-10.0)

METRICS_HEADER = ["iteration", "azimuth_deg", "elevation_deg", "F", "planning_time_s",
                  "coverage", "point_count", "growth_rate"]


class MeshError(ValueError):
    pass


def coverage(model_points, cloud, radius: float = COVERAGE_RADIUS) -> float:
    """Fraction of model points with a cloud point within ``radius`` (exact NN)."""
    model_points = np.asarray(model_points, dtype=float).reshape(-1, 3)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(model_points) == 0:
        return 0.0
    return float(covered_mask(model_points, cloud, radius).mean())


def covered_mask(model_points, cloud, radius: float = COVERAGE_RADIUS) -> np.ndarray:
    if len(cloud) == 0:
        return np.zeros(len(model_points), dtype=bool)
    dist, _ = cKDTree(cloud).query(model_points, k=1)
    return dist <= radius


def growth_rate(prev_count: int, curr_count: int) -> float:
    if prev_count == 0:
        raise ZeroDivisionError("growth rate undefined for an empty previous cloud")
    return (curr_count - prev_count) / prev_count


def voxel_keys(points, leaf: float = FILTER_LEAF) -> np.ndarray:
    """Unique voxel-filter cells of ``points`` packed into int64 keys."""
    idx = np.floor(np.asarray(points) / leaf).astype(np.int64) + (1 << 20)
    keys = (idx[:, 0] << 42) | (idx[:, 1] << 21) | idx[:, 2]
    return np.unique(keys)


def pose_angles(pose: ViewPose, center) -> tuple[float, float]:
    d = pose.position - np.asarray(center, dtype=float)
    az = azimuth_of(pose, center)
    el = math.atan2(d[2], math.hypot(d[0], d[1]))
    return math.degrees(az or 0.0), math.degrees(el)


def pose_to_six(pose: ViewPose) -> list[float]:
    return [*pose.position.tolist(), *(pose.position + pose.optical_axis).tolist()]


def pose_from_six(values) -> ViewPose:
    v = [float(x) for x in values]
    return ViewPose.look_at(v[:3], v[3:])


def prepare_mesh(cfg: RunConfig) -> sensor.TriangleMesh:
    """Load, scale and re-orient the mesh; place it centered on the origin, resting on z = 0."""
    try:
        mesh = sensor.load_mesh(cfg.mesh_path)
    except (OSError, sensor.ParseError, sensor.EmptyMesh) as exc:
        raise MeshError(str(exc)) from exc
    R = {"z": np.eye(3),
         "y": np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]]),
         "x": np.array([[0, 0, -1.0], [0, 1, 0], [1, 0, 0]])}[cfg.mesh_up]
    mesh = mesh.transformed(R=R, scale=cfg.mesh_scale)
    lo, hi = mesh.bounds
    return mesh.transformed(t=[-(lo[0] + hi[0]) / 2, -(lo[1] + hi[1]) / 2, -lo[2]])


def default_initial_pose(mesh: sensor.TriangleMesh, cfg: RunConfig) -> ViewPose:
    lo, hi = mesh.bounds
    center = 0.5 * (lo + hi)
    dist = cfg.d_c + 0.5 * float(np.linalg.norm(hi - lo))
    el = math.radians(45.0)
    return ViewPose.look_at(center + dist * np.array([math.cos(el), 0.0, math.sin(el)]), center)


def scene_from_grid(grid: VoxelGrid, cfg: RunConfig) -> tuple[EllipsoidScene, dict]:
    out = {}
    lists = []
    for name, state in (("occupied", OCCUPIED), ("frontier", FRONTIER)):
        centers = grid.cell_centers(grid.cells(state))
        if len(centers) == 0:
            lists.append([])
            out[name] = 0
            continue
        model, clustering = select_cluster_count(centers, cfg.T_min, cfg.T_max, cfg.seed, cfg.cov_floor)
        lists.append(fit_cluster_ellipsoids(clustering, centers, cfg.resolution, cfg.mvee()))
        out[name] = clustering.T
    return EllipsoidScene(lists[0], lists[1]), out


def scene_to_json(scene: EllipsoidScene) -> list[dict]:
    return [{"class": "frontier" if scene.is_frontier(i) else "occupied",
             "center": e.center.tolist(), "shape": e.shape.tolist()}
            for i, e in enumerate(scene.all())]


def scene_from_json(items) -> EllipsoidScene:
    occ = [Ellipsoid(d["center"], d["shape"]) for d in items if d["class"] == "occupied"]
    fr = [Ellipsoid(d["center"], d["shape"]) for d in items if d["class"] == "frontier"]
    return EllipsoidScene(occ, fr)


@dataclass
class IterationRecord:
    iteration: int
    pose: ViewPose
    F: float
    planning_time: float
    coverage: float
    observable_coverage: float
    point_count: int
    growth_rate: float
    azimuth_deg: float = float("nan")
    elevation_deg: float = float("nan")
    partition: int | None = None
    scanned_before: list = field(default_factory=list)
    admissible: list = field(default_factory=list)
    n_candidates: int = 0
    n_scored: int = 0
    clusters: dict = field(default_factory=dict)
    stage_times: dict = field(default_factory=dict)
    sampling_bbox: list | None = None

    def csv_row(self) -> list[str]:
        return [str(self.iteration), repr(self.azimuth_deg), repr(self.elevation_deg), repr(float(self.F)),
                repr(self.planning_time), repr(self.coverage), str(self.point_count), repr(self.growth_rate)]


@dataclass
class RunState:
    cloud: list = field(default_factory=list)
    grid: VoxelGrid | None = None
    scene: EllipsoidScene = field(default_factory=EllipsoidScene)
    partitions: PartitionState | None = None
    history: list = field(default_factory=list)
    filter_keys: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def point_count(self) -> int:
        return int(len(self.filter_keys))

    def cloud_array(self) -> np.ndarray:
        return np.concatenate(self.cloud) if self.cloud else np.empty((0, 3))


class Planner:
    """Runs the planning loop for one configuration.

    ``forced_poses`` replays a fixed scan sequence (used by the benchmark so
    both evaluators see identical maps); scoring still happens for timing.
    """

    def __init__(self, cfg: RunConfig, out_dir=None, forced_poses=None):
        self.cfg = cfg.validate()
        self.cam = cfg.camera()
        self.mesh = prepare_mesh(cfg)
        self.out_dir = out_dir
        self.forced = list(forced_poses) if forced_poses is not None else None
        self.rng = np.random.default_rng(cfg.seed)
        self.model_points, normals = sensor.sample_surface(self.mesh, COVERAGE_SAMPLES, cfg.seed)
        if sensor.signed_volume(self.mesh) < 0:
            normals = -normals
        self.observable = np.arcsin(np.clip(normals[:, 2], -1, 1)) >= OBSERVABLE_MIN_ELEVATION
        self.covered = np.zeros(len(self.model_points), dtype=bool)
        self.raycast = RaycastScorer(self.cam) if cfg.evaluator == "raycast" else None
        self.state = RunState(partitions=PartitionState(cfg.beta))

    def initial_pose(self) -> ViewPose:
        if self.cfg.initial_pose is not None:
            return pose_from_six(self.cfg.initial_pose)
        return default_initial_pose(self.mesh, self.cfg)

    # --- stages -------------------------------------------------------------
    def _update_map(self, img, points, first: bool, times: dict):
        t0 = time.perf_counter()
        st = self.state
        if first:
            st.grid = VoxelGrid.covering(points, self.cfg.resolution)
        else:
            st.grid = grow_to_cover(st.grid, points)
        integrate_scan(st.grid, img, self.cam)
        extract_frontiers(st.grid)
        st.grid = update_bounding_box(st.grid, self.cfg.gamma, img.pose, first)
        times["map"] = time.perf_counter() - t0

    def _plan(self, times: dict):
        cfg, st = self.cfg, self.state
        clusters = {}
        if cfg.evaluator == "projection":
            t0 = time.perf_counter()
            st.scene, clusters = scene_from_grid(st.grid, cfg)
            times["fit"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        candidates = sample_candidates(st.grid.bbox, cfg.sampling())
        center = st.grid.center
        allowed = admissible_candidates(candidates, st.partitions, center)
        times["sample"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        scores = np.full(len(candidates), -np.inf)
        for i in allowed:
            if cfg.evaluator == "projection":
                scores[i] = score_view(st.scene, candidates[i], self.cam).F
            else:
                scores[i] = self.raycast(st.grid, candidates[i])[0]
        best = int(np.argmax(scores))
        times["score"] = time.perf_counter() - t0
        return candidates, allowed, scores, best, center, clusters

    # --- loop ---------------------------------------------------------------
    def run(self) -> RunState:
        """Scan, map, and plan the next view until a stop rule fires.

        Row ``k`` of the history describes the view scanned at iteration ``k``:
        its score when chosen, and the time spent choosing it plus the map
        update its scan triggered. Iteration 1 is the manual initial view.
        """
        cfg, st = self.cfg, self.state
        pose = self.forced[0] if self.forced else self.initial_pose()
        plan = {"F": float("nan"), "time": 0.0, "scanned_before": [], "admissible": [],
                "n_candidates": 0, "n_scored": 0, "clusters": {}, "times": {}}
        low_growth = 0
        for it in range(1, cfg.max_iterations + 1):
            img = sensor.render_depth(self.mesh, pose, self.cam, cfg.depth_noise, self.rng)
            points = sensor.depth_to_world_cloud(img, self.cam)
            if len(points) == 0 and it == 1:
                raise MeshError("initial view sees nothing of the mesh")
            st.cloud.append(points)
            prev_count = st.point_count
            if len(points):
                st.filter_keys = np.union1d(st.filter_keys, voxel_keys(points))
                self.covered |= covered_mask(self.model_points, points)
            rate = growth_rate(prev_count, st.point_count) if it > 1 else float("nan")

            times = dict(plan["times"])
            t0 = time.perf_counter()
            if len(points):
                self._update_map(img, points, it == 1, times)
            map_time = time.perf_counter() - t0
            center = st.grid.center
            if it == 1:
                part = partition_of(pose, center, cfg.beta)
            else:
                part = plan["partition"]
            az, el = pose_angles(pose, center if it == 1 else plan["center"])
            rec = IterationRecord(
                iteration=it, pose=pose, F=plan["F"], planning_time=plan["time"] + map_time,
                coverage=float(self.covered.mean()),
                observable_coverage=float(self.covered[self.observable].mean()),
                point_count=st.point_count, growth_rate=rate, azimuth_deg=az, elevation_deg=el,
                partition=part, scanned_before=plan["scanned_before"], admissible=plan["admissible"],
                n_candidates=plan["n_candidates"], n_scored=plan["n_scored"],
                clusters=plan["clusters"], stage_times=times, sampling_bbox=plan.get("bbox"))
            st.history.append(rec)
            st.partitions.mark(part)
            log.info("iter %d: F=%.1f plan=%.3fs cov=%.4f pts=%d growth=%.3f", it, rec.F,
                     rec.planning_time, rec.coverage, rec.point_count, rate)
            if self.out_dir is not None:
                self._write_iteration(rec, points)

            if it > 5 and rate < cfg.growth_epsilon:
                low_growth += 1
            else:
                low_growth = 0
            if low_growth >= 2 or it == cfg.max_iterations:
                break

            times = {}
            t0 = time.perf_counter()
            scanned_before = sorted(st.partitions.scanned)
            admissible = sorted(admissible_partitions(st.partitions))
            candidates, allowed, scores, best, center, clusters = self._plan(times)
            plan_time = time.perf_counter() - t0
            nxt = candidates[best]
            if self.forced is not None and it < len(self.forced):
                nxt = self.forced[it]
            plan = {"F": float(scores[best]), "time": plan_time, "scanned_before": scanned_before,
                    "admissible": admissible, "n_candidates": len(candidates),
                    "n_scored": len(allowed), "clusters": clusters, "times": times,
                    "center": center, "partition": partition_of(nxt, center, cfg.beta),
                    "bbox": [b.tolist() for b in st.grid.bbox]}
            pose = nxt
        if self.out_dir is not None:
            self._write_summary()
        return st

    # --- outputs ------------------------------------------------------------
    def _write_iteration(self, rec: IterationRecord, points):
        out = self.out_dir
        os.makedirs(os.path.join(out, "clouds"), exist_ok=True)
        os.makedirs(os.path.join(out, "scene"), exist_ok=True)
        sensor.write_cloud_ply(points, os.path.join(out, "clouds", f"iter_{rec.iteration}.ply"))
        with open(os.path.join(out, "scene", f"iter_{rec.iteration}.json"), "w") as fh:
            json.dump(scene_to_json(self.state.scene), fh)

    def _write_summary(self):
        out = self.out_dir
        with open(os.path.join(out, "config.echo"), "w") as fh:
            fh.write(format_config(self.cfg))
        with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for rec in self.state.history:
                w.writerow(rec.csv_row())
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(self.report(), fh, indent=2)

    def report(self) -> dict:
        hist = self.state.history
        times = [r.planning_time for r in hist[1:]]
        return {
            "evaluator": self.cfg.evaluator,
            "iterations": len(hist),
            "final_coverage": hist[-1].coverage if hist else 0.0,
            "final_observable_coverage": hist[-1].observable_coverage if hist else 0.0,
            "final_point_count": hist[-1].point_count if hist else 0,
            "mean_planning_time_s": float(np.mean(times)) if times else float("nan"),
            "history": [{
                "iteration": r.iteration,
                "pose": pose_to_six(r.pose),
                "partition": r.partition,
                "scanned_before": r.scanned_before,
                "admissible_partitions": r.admissible,
                "F": None if math.isnan(r.F) else r.F,
                "planning_time_s": r.planning_time,
                "stage_times_s": r.stage_times,
                "coverage": r.coverage,
                "observable_coverage": r.observable_coverage,
                "point_count": r.point_count,
                "growth_rate": None if math.isnan(r.growth_rate) else r.growth_rate,
                "growth_anomaly": bool(r.growth_rate < 0),
                "clusters": r.clusters,
                "sampling_bbox": r.sampling_bbox,
                "candidates": r.n_candidates,
                "scored": r.n_scored,
            } for r in hist],
        }


def run(cfg: RunConfig, out_dir=None) -> RunState:
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    return Planner(cfg, out_dir).run()


def bench(cfg: RunConfig, out_dir=None) -> dict:
    """Plan with projection scoring, then replay the same scans scored by ray casting."""
    sub = (lambda name: os.path.join(out_dir, name)) if out_dir is not None else (lambda name: None)
    proj = Planner(cfg.replace(evaluator="projection"), sub("projection"))
    if out_dir is not None:
        os.makedirs(sub("projection"), exist_ok=True)
    proj.run()
    poses = [r.pose for r in proj.state.history]
    ray = Planner(cfg.replace(evaluator="raycast"), sub("raycast"), forced_poses=poses)
    if out_dir is not None:
        os.makedirs(sub("raycast"), exist_ok=True)
    ray.run()
    rows = []
    for a, b in zip(proj.state.history, ray.state.history):
        rows.append({"iteration": a.iteration, "projection_s": a.planning_time, "raycast_s": b.planning_time,
                     "projection_candidates": a.n_scored, "raycast_candidates": b.n_scored})
    timed = rows[1:]
    p_mean = float(np.mean([r["projection_s"] for r in timed])) if timed else float("nan")
    r_mean = float(np.mean([r["raycast_s"] for r in timed])) if timed else float("nan")
    report = {
        "rows": rows,
        "projection_mean_s": p_mean,
        "raycast_mean_s": r_mean,
        "speedup": r_mean / p_mean if timed else float("nan"),
        "projection": proj.report(),
        "raycast": ray.report(),
    }
    if out_dir is not None:
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2)
        with open(os.path.join(out_dir, "bench.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "projection_s", "raycast_s"])
            for r in rows:
                w.writerow([r["iteration"], repr(r["projection_s"]), repr(r["raycast_s"])])
    return report
