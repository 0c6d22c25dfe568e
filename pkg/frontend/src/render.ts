// Canvas drawing: placed tiles, detection overlays, and the task silhouette.
// Canvas pixels map 1:1 to scene pixels, so overlay coordinates align with
// tile positions without any scaling.

import { Board, PlacedTile } from "./board.js";
import { Detection, Template } from "./types.js";

const MAT_COLOR = "rgb(205,205,205)";

function rgb(c: [number, number, number], alpha = 1): string {
  return alpha >= 1 ? `rgb(${c[0]},${c[1]},${c[2]})` : `rgba(${c[0]},${c[1]},${c[2]},${alpha})`;
}

function tracePolygon(ctx: CanvasRenderingContext2D, pts: [number, number][]): void {
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i][0], pts[i][1]);
  ctx.closePath();
}

export function tilePolygon(board: Board, tile: PlacedTile): [number, number][] {
  const spec = board.spec(tile.specId);
  const t = (tile.thetaDeg * Math.PI) / 180;
  const cos = Math.cos(t);
  const sin = Math.sin(t);
  return spec.unit_vertices.map(([x, y]) => [
    tile.cx + x * cos - y * sin,
    tile.cy + x * sin + y * cos,
  ]);
}

export function drawBoard(
  ctx: CanvasRenderingContext2D,
  board: Board,
  options: {
    selectedId?: number | null;
    silhouette?: Template | null;
    showOverlays?: boolean;
  } = {},
): void {
  ctx.fillStyle = MAT_COLOR;
  ctx.fillRect(0, 0, board.width, board.height);

  if (options.silhouette) drawSilhouette(ctx, board, options.silhouette);

  for (const tile of board.tiles) {
    const spec = board.spec(tile.specId);
    const pts = tilePolygon(board, tile);
    tracePolygon(ctx, pts);
    ctx.fillStyle = rgb(spec.color);
    ctx.fill();
    ctx.lineWidth = tile.id === options.selectedId ? 3 : 2;
    ctx.strokeStyle =
      tile.id === options.selectedId ? "#ffffff" : rgb(spec.color.map((c) => c * 0.6) as never);
    ctx.stroke();
  }

  if (options.showOverlays !== false) {
    for (const det of board.lastDetections) drawDetection(ctx, det);
  }
}

function drawDetection(ctx: CanvasRenderingContext2D, det: Detection): void {
  tracePolygon(ctx, det.vertices);
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = "rgba(20,20,20,0.9)";
  ctx.setLineDash([5, 3]);
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "rgba(20,20,20,0.9)";
  ctx.font = "11px sans-serif";
  ctx.fillText(`${det.shape} ${det.score.toFixed(2)}`, det.cx + 4, det.cy - 4);
}

/** First alternative of each part group, centered on the mat. */
export function drawSilhouette(
  ctx: CanvasRenderingContext2D,
  board: Board,
  template: Template,
): void {
  const ox = board.width / 2;
  const oy = board.height / 2;
  for (const group of template.parts) {
    for (const slot of group.alternatives[0]) {
      if (!slot.vertices) continue;
      tracePolygon(
        ctx,
        slot.vertices.map(([x, y]) => [x + ox, y + oy] as [number, number]),
      );
      ctx.fillStyle = "rgba(120,120,120,0.25)";
      ctx.fill();
      ctx.lineWidth = 1;
      ctx.strokeStyle = "rgba(100,100,100,0.7)";
      ctx.stroke();
    }
  }
}
