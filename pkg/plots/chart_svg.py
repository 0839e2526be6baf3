"""
Static SVG scatter plots of a channel chart, rendered with QtSvg.

With ground truth, the figure shows the true layout and the learned chart
side by side, each point colored by its angle around the truth centroid.
Without ground truth, only the chart panel is drawn, colored by time.
"""

import logging
import math
import os

import numpy as np
from PyQt5.QtCore import QBuffer, QByteArray, QIODevice, QPointF, QRect, QRectF, QSize, Qt
from PyQt5.QtGui import QColor, QFont, QGuiApplication, QPainter, QPen
from PyQt5.QtSvg import QSvgGenerator

from core.storage import atomic_write

log = logging.getLogger(__name__)

PANEL_SIZE = 420
MARGIN = 36
POINT_RADIUS = 1.6

_app = None


def _ensure_app():
    """Painting needs a QGuiApplication; create an offscreen one if absent."""
    global _app
    app = QGuiApplication.instance()
    if app is None:
        os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
        _app = QGuiApplication(["chartkit", "-platform", "offscreen"])
        app = _app
    return app


def point_colors(truth=None, n=None):
    """Hue per point: angle around the truth centroid, or position in time."""
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        centered = truth - truth.mean(axis=0)
        angle = np.arctan2(centered[:, 1], centered[:, 0])
        hues = ((angle + math.pi) / (2 * math.pi) * 359).astype(int)
    else:
        hues = (np.linspace(0, 300, n)).astype(int) if n else np.zeros(0, dtype=int)
    return [QColor.fromHsv(int(h) % 360, 200, 220) for h in hues]


def _panel_transform(points, rect):
    """Map points into rect with equal axis scaling; y grows upward."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-12))
    scale = (rect.width() - 2 * MARGIN) / span
    center = (lo + hi) / 2.0
    cx = rect.x() + rect.width() / 2.0
    cy = rect.y() + rect.height() / 2.0
    xs = cx + (points[:, 0] - center[0]) * scale
    ys = cy - (points[:, 1] - center[1]) * scale
    return xs, ys


def _draw_panel(painter, rect, points, colors, title):
    painter.setPen(QPen(QColor(180, 180, 180), 1))
    painter.setBrush(Qt.NoBrush)
    painter.drawRect(rect)
    painter.setPen(QColor(40, 40, 40))
    painter.drawText(
        QRectF(rect.x(), rect.y() + 4, rect.width(), MARGIN - 8),
        Qt.AlignHCenter | Qt.AlignVCenter, title,
    )
    if len(points) == 0:
        return
    xs, ys = _panel_transform(points, rect)
    painter.setPen(Qt.NoPen)
    for x, y, color in zip(xs, ys, colors):
        painter.setBrush(color)
        painter.drawEllipse(QPointF(float(x), float(y)), POINT_RADIUS, POINT_RADIUS)


def render_chart_svg(chart, truth=None, title="Channel chart"):
    """SVG document bytes for chart (N x 2) and optional truth (N x 2)."""
    _ensure_app()
    chart = np.asarray(chart, dtype=np.float64).reshape(-1, 2)
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    panels = [("Ground truth", truth), (title, chart)] if truth is not None else [(title, chart)]
    colors = point_colors(truth, len(chart))

    width = PANEL_SIZE * len(panels)
    buffer = QBuffer()
    buffer.open(QIODevice.WriteOnly)
    generator = QSvgGenerator()
    generator.setOutputDevice(buffer)
    generator.setSize(QSize(width, PANEL_SIZE))
    generator.setViewBox(QRect(0, 0, width, PANEL_SIZE))
    generator.setTitle(title)
    generator.setDescription(f"{len(chart)} chart points")

    painter = QPainter()
    painter.begin(generator)
    painter.setFont(QFont("sans-serif", 10))
    for k, (name, points) in enumerate(panels):
        rect = QRectF(k * PANEL_SIZE + 4, 4, PANEL_SIZE - 8, PANEL_SIZE - 8)
        _draw_panel(painter, rect, points, colors, name)
    painter.end()
    buffer.close()
    return bytes(QByteArray(buffer.data()))


def write_chart_svg(path, chart, truth=None, title="Channel chart"):
    data = render_chart_svg(chart, truth, title)
    atomic_write(path, data)
    log.info("Wrote chart figure (%d points) to %s", len(chart), path)
    return path
