/**
 * Stroke raster: the single source of truth for what the user drew.
 * Values are the wire format's 0 (background) / 255 (stroke).
 */

import { encodeGray8, decodeGray8 } from "./png";

export const DEFAULT_BRUSH_RADIUS = 3;
export const STROKE_VALUE = 255;

export interface Point {
  x: number;
  y: number;
}

export class StrokeRaster {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    if (width <= 0 || height <= 0) throw new Error("raster dimensions must be positive");
    if (data && data.length !== width * height) {
      throw new Error(`data length ${data.length} != ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = data ? data.slice() : new Uint8Array(width * height);
  }

  clone(): StrokeRaster {
    return new StrokeRaster(this.width, this.height, this.data);
  }

  isEmpty(): boolean {
    return this.data.every((v) => v === 0);
  }

  clear(): void {
    this.data.fill(0);
  }

  /** Stamp a round brush at one point. */
  stamp(center: Point, radius: number = DEFAULT_BRUSH_RADIUS, erase = false): void {
    const value = erase ? 0 : STROKE_VALUE;
    const cx = Math.round(center.x);
    const cy = Math.round(center.y);
    const r2 = radius * radius;
    for (let y = Math.max(0, cy - radius); y <= Math.min(this.height - 1, cy + radius); y++) {
      for (let x = Math.max(0, cx - radius); x <= Math.min(this.width - 1, cx + radius); x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Stamp the brush along the pointer path so fast strokes stay connected. */
  stampPath(points: Point[], radius: number = DEFAULT_BRUSH_RADIUS, erase = false): void {
    if (points.length === 0) return;
    this.stamp(points[0]!, radius, erase);
    for (let i = 1; i < points.length; i++) {
      const a = points[i - 1]!;
      const b = points[i]!;
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp({ x: a.x + t * (b.x - a.x), y: a.y + t * (b.y - a.y) }, radius, erase);
      }
    }
  }

  /** Serialize to the 8-bit {0,255} PNG wire format. */
  toPng(): Uint8Array {
    return encodeGray8(this.width, this.height, this.data);
  }

  static fromPng(bytes: Uint8Array): StrokeRaster {
    const { width, height, pixels } = decodeGray8(bytes);
    return new StrokeRaster(width, height, pixels);
  }
}
