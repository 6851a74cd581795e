import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from params import SystemParams

# 方向判定的共线容差，单位 m
EPS = 1e-12
TWO_PI = 2.0 * math.pi
# 角度桶登记区间的两侧余量，单位 rad
_BIN_MARGIN = 1e-9


class Point(NamedTuple):
    x: float
    y: float


class Segment(NamedTuple):
    """遮挡线段：中心点、长度与朝向角"""
    center: Point
    length: float
    angle: float

    def endpoints(self) -> Tuple[Point, Point]:
        dx = 0.5 * self.length * math.cos(self.angle)
        dy = 0.5 * self.length * math.sin(self.angle)
        cx, cy = self.center
        return Point(cx - dx, cy - dy), Point(cx + dx, cy + dy)


@dataclass(frozen=True)
class Disk:
    center: Point = Point(0.0, 0.0)
    radius: float = 1.0

    @property
    def area(self) -> float:
        return math.pi * self.radius * self.radius

    def inflated(self, margin: float) -> 'Disk':
        return Disk(self.center, self.radius + margin)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        offset = pts - np.asarray(self.center, dtype=float)
        return np.hypot(offset[:, 0], offset[:, 1]) <= self.radius * (1.0 + 1e-12)


class SegmentSet:
    """
    遮挡线段集合（按列存储，便于向量化的相交判定）

    Args:
        centers (np.ndarray): 中心点，形状 (n, 2)
        lengths (np.ndarray): 长度，形状 (n,)
        angles (np.ndarray): 朝向角，形状 (n,)，取值 [0, 2π)
    """

    def __init__(self, centers: np.ndarray, lengths: np.ndarray, angles: np.ndarray):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        self.lengths = np.asarray(lengths, dtype=float).reshape(-1)
        self.angles = np.asarray(angles, dtype=float).reshape(-1)
        if not len(self.centers) == len(self.lengths) == len(self.angles):
            raise ValueError("遮挡线段的中心、长度、角度数量不一致")
        half = 0.5 * self.lengths[:, None] * np.column_stack([np.cos(self.angles), np.sin(self.angles)])
        self.starts = self.centers - half
        self.ends = self.centers + half

    @classmethod
    def empty(cls) -> 'SegmentSet':
        return cls(np.empty((0, 2)), np.empty(0), np.empty(0))

    @classmethod
    def from_segments(cls, segments: Iterable[Segment]) -> 'SegmentSet':
        items = list(segments)
        if not items:
            return cls.empty()
        return cls([s.center for s in items], [s.length for s in items], [s.angle for s in items])

    @classmethod
    def from_endpoints(cls, starts: np.ndarray, ends: np.ndarray) -> 'SegmentSet':
        starts = np.asarray(starts, dtype=float).reshape(-1, 2)
        ends = np.asarray(ends, dtype=float).reshape(-1, 2)
        delta = ends - starts
        angles = np.mod(np.arctan2(delta[:, 1], delta[:, 0]), TWO_PI)
        return cls(0.5 * (starts + ends), np.hypot(delta[:, 0], delta[:, 1]), angles)

    def segments(self) -> List[Segment]:
        return [Segment(Point(float(c[0]), float(c[1])), float(l), float(a))
                for c, l, a in zip(self.centers, self.lengths, self.angles)]

    def with_segment(self, segment: Segment) -> 'SegmentSet':
        return SegmentSet(np.vstack([self.centers, [segment.center]]),
                          np.append(self.lengths, segment.length),
                          np.append(self.angles, segment.angle))

    def __len__(self) -> int:
        return len(self.lengths)


def sample_uniform_in_disk(count: int, region: Disk, rng: np.random.Generator) -> np.ndarray:
    """在圆盘内独立均匀地采样 count 个点，返回形状 (count, 2)"""
    radius = region.radius * np.sqrt(rng.random(count))
    theta = TWO_PI * rng.random(count)
    cx, cy = region.center
    return np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])


def sample_ppp(density: float, region: Disk, rng: np.random.Generator) -> np.ndarray:
    """
    在圆盘上采样齐次泊松点过程

    Args:
        density (float): 密度，1/m²
        region (Disk): 采样区域
        rng (np.random.Generator): 随机数流

    Returns:
        np.ndarray: 点坐标，形状 (n, 2)，n ~ Poisson(density·面积)
    """
    if density < 0:
        raise ValueError(f"点过程密度不能为负: {density}")
    if not region.radius > 0:
        raise ValueError(f"采样区域半径必须为正数: {region.radius}")
    count = int(rng.poisson(density * region.area)) if density > 0 else 0
    return sample_uniform_in_disk(count, region, rng)


def sample_blockages(params: SystemParams, region: Disk, rng: np.random.Generator) -> SegmentSet:
    """采样线段遮挡场；中心点区域向外扩展 len_max/2，保留跨越边界的线段"""
    centers = sample_ppp(params.lambda_b, region.inflated(0.5 * params.len_max), rng)
    count = len(centers)
    lengths = rng.uniform(params.len_min, params.len_max, count)
    angles = rng.uniform(0.0, TWO_PI, count)
    return SegmentSet(centers, lengths, angles)


def _orientation(p: np.ndarray, q: np.ndarray, r: np.ndarray) -> np.ndarray:
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])


def _within_box(p: np.ndarray, q: np.ndarray, r: np.ndarray, eps: float) -> np.ndarray:
    return ((np.minimum(p[..., 0], q[..., 0]) - eps <= r[..., 0]) & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]) + eps)
            & (np.minimum(p[..., 1], q[..., 1]) - eps <= r[..., 1]) & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]) + eps))


def segments_intersect_many(a1: np.ndarray, a2: np.ndarray, b1: np.ndarray, b2: np.ndarray,
                            eps: float = EPS) -> np.ndarray:
    """
    逐行判定闭线段 a1-a2 与 b1-b2 是否有公共点（接触、共线重叠均视为相交）

    Args:
        a1, a2, b1, b2 (np.ndarray): 端点坐标，形状 (..., 2)，可广播

    Returns:
        np.ndarray: 布尔数组
    """
    a1, a2, b1, b2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, a2, b1, b2)))
    o1 = _orientation(a1, a2, b1)
    o2 = _orientation(a1, a2, b2)
    o3 = _orientation(b1, b2, a1)
    o4 = _orientation(b1, b2, a2)
    s1, s2, s3, s4 = (np.where(np.abs(o) <= eps, 0, np.sign(o)) for o in (o1, o2, o3, o4))
    proper = (s1 * s2 < 0) & (s3 * s4 < 0)
    touching = (((s1 == 0) & _within_box(a1, a2, b1, eps))
                | ((s2 == 0) & _within_box(a1, a2, b2, eps))
                | ((s3 == 0) & _within_box(b1, b2, a1, eps))
                | ((s4 == 0) & _within_box(b1, b2, a2, eps)))
    return proper | touching


def segments_intersect(a1: Tuple[float, float], a2: Tuple[float, float],
                       b1: Tuple[float, float], b2: Tuple[float, float], eps: float = EPS) -> bool:
    """单对线段的相交判定"""
    return bool(segments_intersect_many(a1, a2, b1, b2, eps))


def is_los(a: Tuple[float, float], b: Tuple[float, float], blockages: SegmentSet, eps: float = EPS) -> bool:
    """a-b 连线不与任何遮挡线段相交时为视距"""
    if len(blockages) == 0:
        return True
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return not bool(np.any(segments_intersect_many(a, b, blockages.starts, blockages.ends, eps)))


def arc_half_angle(r, offset, radius) -> np.ndarray:
    """
    以原点为圆心、半径 r 的圆落在圆盘（圆心距原点 offset、半径 radius）内的半张角，取值 [0, π]
    """
    r, offset, radius = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, offset, radius)))
    denom = 2.0 * r * offset
    with np.errstate(divide='ignore', invalid='ignore'):
        cos_arg = (r * r + offset * offset - radius * radius) / denom
    cos_arg = np.where(denom > 0, cos_arg, np.where(np.maximum(r, offset) < radius, -1.0, 1.0))
    return np.arccos(np.clip(cos_arg, -1.0, 1.0))


def _point_segment_distance(point: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    delta = ends - starts
    length_sq = np.einsum('ij,ij->i', delta, delta)
    with np.errstate(divide='ignore', invalid='ignore'):
        t = np.einsum('ij,ij->i', point - starts, delta) / length_sq
    t = np.clip(np.where(length_sq > 0, t, 0.0), 0.0, 1.0)
    nearest = starts + t[:, None] * delta
    return np.hypot(nearest[:, 0] - point[0], nearest[:, 1] - point[1])


class LosView:
    """
    以某一观察点为中心的视距查询器

    按极角把圆周均分为若干桶，每条遮挡线段登记到其张角覆盖的全部桶中；查询目标点时只对
    目标所在桶内的候选线段做精确相交判定，结果与 is_los 一致。
    """

    def __init__(self, origin: Tuple[float, float], blockages: SegmentSet,
                 n_bins: Optional[int] = None, eps: float = EPS):
        self.origin = np.asarray(origin, dtype=float)
        self.blockages = blockages
        self.eps = eps
        self.n_bins = int(n_bins or min(max(len(blockages), 64), 8192))
        self._bin_width = TWO_PI / self.n_bins
        self._build()

    def _build(self):
        count = len(self.blockages)
        if count == 0:
            self._indptr = np.zeros(self.n_bins + 1, dtype=int)
            self._members = np.empty(0, dtype=int)
            return
        rel_s = self.blockages.starts - self.origin
        rel_e = self.blockages.ends - self.origin
        phi_s = np.mod(np.arctan2(rel_s[:, 1], rel_s[:, 0]), TWO_PI)
        phi_e = np.mod(np.arctan2(rel_e[:, 1], rel_e[:, 0]), TWO_PI)
        delta = np.mod(phi_e - phi_s + math.pi, TWO_PI) - math.pi
        lo = np.where(delta >= 0, phi_s, phi_e) - _BIN_MARGIN
        width = np.abs(delta) + 2.0 * _BIN_MARGIN
        # 经过观察点的线段对所有方向登记
        through = _point_segment_distance(self.origin, self.blockages.starts, self.blockages.ends) <= self.eps
        width = np.where(through, TWO_PI, width)

        first = np.floor(lo / self._bin_width).astype(int)
        last = np.floor((lo + width) / self._bin_width).astype(int)
        spans = np.minimum(last - first + 1, self.n_bins)
        seg_ids = np.repeat(np.arange(count), spans)
        offsets = np.arange(spans.sum()) - np.repeat(np.cumsum(spans) - spans, spans)
        bins = np.mod(np.repeat(first, spans) + offsets, self.n_bins)
        order = np.argsort(bins, kind='stable')
        self._members = seg_ids[order]
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(bins, minlength=self.n_bins))])

    def visible(self, targets: np.ndarray) -> np.ndarray:
        """
        批量判定观察点到各目标点是否视距

        Args:
            targets (np.ndarray): 目标点，形状 (m, 2)

        Returns:
            np.ndarray: 布尔数组，形状 (m,)
        """
        targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        m = len(targets)
        if m == 0 or len(self.blockages) == 0:
            return np.ones(m, dtype=bool)
        rel = targets - self.origin
        phi = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), TWO_PI)
        bins = np.minimum((phi / self._bin_width).astype(int), self.n_bins - 1)
        begin = self._indptr[bins]
        counts = self._indptr[bins + 1] - begin
        total = int(counts.sum())
        if total == 0:
            return np.ones(m, dtype=bool)
        owner = np.repeat(np.arange(m), counts)
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        seg = self._members[np.repeat(begin, counts) + offsets]
        blocked = segments_intersect_many(self.origin, targets[owner],
                                          self.blockages.starts[seg], self.blockages.ends[seg], self.eps)
        return np.bincount(owner[blocked], minlength=m) == 0


@dataclass(frozen=True, eq=False)
class Scene:
    """一次采样得到的场景：区域、遮挡线段与 RIS/用户/基站位置"""
    region: Disk
    blockages: SegmentSet
    ris: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    users: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    bss: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'region': {'center': list(self.region.center), 'radius': self.region.radius},
            'blockages': [{'center': list(s.center), 'length': s.length, 'angle': s.angle}
                          for s in self.blockages.segments()],
            'ris': np.asarray(self.ris, dtype=float).tolist(),
            'users': np.asarray(self.users, dtype=float).tolist(),
            'bss': np.asarray(self.bss, dtype=float).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Scene':
        region = Disk(Point(*data['region']['center']), float(data['region']['radius']))
        blockages = SegmentSet.from_segments(
            Segment(Point(*item['center']), float(item['length']), float(item['angle']))
            for item in data.get('blockages', []))

        def points(key):
            return np.asarray(data.get(key, []), dtype=float).reshape(-1, 2)

        return cls(region, blockages, points('ris'), points('users'), points('bss'))


def dump_scene(scene: Scene, path: str) -> None:
    """场景写为 JSON，用于调试与回归用例"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(scene.to_dict(), f, indent=2)
        f.write('\n')


def load_scene(path: str) -> Scene:
    with open(path, 'r', encoding='utf-8') as f:
        return Scene.from_dict(json.load(f))
