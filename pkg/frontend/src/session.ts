/**
 * Canvas session: stroke layer, undo history, edit chain, request gating.
 *
 * The session never mutates slice pixels — only the stroke raster and the
 * stored server responses change; panels always re-render from those.
 */

import { EditResponse, OpenContourError, RefineResponse, SkeditClient } from "./api";
import { bytesToBase64 } from "./png";
import { DEFAULT_BRUSH_RADIUS, Point, StrokeRaster } from "./raster";

export const MIN_UNDO_DEPTH = 20;
const UNDO_CAPACITY = 64;

export interface SessionOptions {
  volumeId: string;
  sliceIndex: number;
  width: number;
  height: number;
  seed?: number;
  samplerSteps?: number;
}

export class CanvasSession {
  readonly volumeId: string;
  readonly sliceIndex: number;
  readonly raster: StrokeRaster;
  brushRadius = DEFAULT_BRUSH_RADIUS;
  eraser = false;

  /** Edits accepted as progression steps; the last one is the current base. */
  readonly chain: EditResponse[] = [];
  lastRefine: RefineResponse | null = null;
  lastEdit: EditResponse | null = null;
  /** Inline hint (e.g. "close your contour"); null when clear. */
  hint: string | null = null;

  private readonly undoStack: Uint8Array[] = [];
  private pending = false;
  private readonly seed: number | undefined;
  private readonly samplerSteps: number | undefined;

  constructor(options: SessionOptions) {
    this.volumeId = options.volumeId;
    this.sliceIndex = options.sliceIndex;
    this.raster = new StrokeRaster(options.width, options.height);
    this.seed = options.seed;
    this.samplerSteps = options.samplerSteps;
  }

  get requestPending(): boolean {
    return this.pending;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Snapshot the raster, then stamp the pointer path with the active tool. */
  applyStroke(points: Point[]): void {
    this.undoStack.push(this.raster.data.slice());
    if (this.undoStack.length > Math.max(UNDO_CAPACITY, MIN_UNDO_DEPTH)) {
      this.undoStack.shift();
    }
    this.raster.stampPath(points, this.brushRadius, this.eraser);
    this.hint = null;
  }

  undo(): boolean {
    const previous = this.undoStack.pop();
    if (!previous) return false;
    this.raster.data.set(previous);
    return true;
  }

  clearStrokes(): void {
    this.undoStack.push(this.raster.data.slice());
    this.raster.clear();
  }

  /** Stroke layer in the wire format the service expects. */
  exportSketch(): string {
    return bytesToBase64(this.raster.toPng());
  }

  async requestRefine(client: SkeditClient): Promise<RefineResponse | null> {
    if (this.pending || this.raster.isEmpty()) return null;
    this.pending = true;
    try {
      this.lastRefine = await client.refine({
        volume_id: this.volumeId,
        slice_index: this.sliceIndex,
        sketch: this.exportSketch(),
      });
      this.hint = null;
      return this.lastRefine;
    } finally {
      this.pending = false;
    }
  }

  async requestEdit(client: SkeditClient): Promise<EditResponse | null> {
    if (this.pending || this.raster.isEmpty()) return null;
    this.pending = true;
    try {
      const base = this.chain.length > 0 ? this.chain[this.chain.length - 1]!.edited : undefined;
      this.lastEdit = await client.edit({
        volume_id: this.volumeId,
        slice_index: this.sliceIndex,
        sketch: this.exportSketch(),
        seed: this.seed,
        sampler_steps: this.samplerSteps,
        ...(base !== undefined ? { base_image: base } : {}),
      });
      this.hint = null;
      return this.lastEdit;
    } catch (error) {
      if (error instanceof OpenContourError) {
        // recoverable: keep strokes, surface an inline hint
        this.hint = "close your contour";
        return null;
      }
      throw error;
    } finally {
      this.pending = false;
    }
  }

  /** Adopt the last edit as the base for the next progression step. */
  useAsBase(): boolean {
    if (!this.lastEdit) return false;
    this.chain.push(this.lastEdit);
    return true;
  }
}
