import { afterEach, describe, expect, it, vi } from "vitest";

import { OpenContourError, SkeditClient } from "../src/api";
import { bytesToBase64, decodeGray8, base64ToBytes } from "../src/png";
import { CanvasSession, MIN_UNDO_DEPTH } from "../src/session";
import { StrokeRaster } from "../src/raster";

const EDIT_RESPONSE = {
  edited: "ZWRpdGVkLXBuZw==",
  interior_mask: "bWFzaw==",
  reference_map: "cmVm",
  difference_map: "ZGlmZg==",
  difference_scale: 0.5,
  metrics: { nrmse: 0.05, ssim: 0.9, psnr: 30.0 },
  seed: 7,
  model_versions: {},
};

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function newSession(overrides: Partial<ConstructorParameters<typeof CanvasSession>[0]> = {}): CanvasSession {
  return new CanvasSession({ volumeId: "vol-000", sliceIndex: 3, width: 32, height: 32, ...overrides });
}

function drawSomething(session: CanvasSession): void {
  session.applyStroke([
    { x: 8, y: 8 },
    { x: 20, y: 16 },
  ]);
}

afterEach(() => {
  vi.restoreAllMocks();
});

describe("undo history", () => {
  it("restores the previous raster bit exactly", () => {
    const session = newSession();
    drawSomething(session);
    const before = session.raster.data.slice();
    session.brushRadius = 5;
    session.applyStroke([{ x: 25, y: 25 }]);
    expect(session.raster.data).not.toEqual(before);
    expect(session.undo()).toBe(true);
    expect(session.raster.data).toEqual(before);
  });

  it("supports at least the guaranteed depth", () => {
    const session = newSession();
    for (let i = 0; i < MIN_UNDO_DEPTH + 5; i++) {
      session.applyStroke([{ x: 2 + (i % 28), y: 2 + (i % 28) }]);
    }
    for (let i = 0; i < MIN_UNDO_DEPTH; i++) {
      expect(session.undo()).toBe(true);
    }
  });

  it("returns false with nothing to undo", () => {
    expect(newSession().undo()).toBe(false);
  });

  it("clearStrokes is undoable", () => {
    const session = newSession();
    drawSomething(session);
    const before = session.raster.data.slice();
    session.clearStrokes();
    expect(session.raster.isEmpty()).toBe(true);
    session.undo();
    expect(session.raster.data).toEqual(before);
  });
});

describe("requests", () => {
  it("refine sends the raster as the wire-format sketch", async () => {
    const fetchMock = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse({ soft: "cw==", binary: "Yg==", model_versions: {} }));
    const session = newSession();
    drawSomething(session);

    const response = await session.requestRefine(new SkeditClient("http://example.test"));
    expect(response?.binary).toBe("Yg==");
    expect(fetchMock).toHaveBeenCalledOnce();
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(String(url)).toBe("http://example.test/api/refine");
    const body = JSON.parse(String(init!.body));
    expect(body.volume_id).toBe("vol-000");
    expect(body.slice_index).toBe(3);
    const sketch = decodeGray8(base64ToBytes(body.sketch));
    expect(sketch.width).toBe(32);
    expect(sketch.pixels).toEqual(session.raster.data);
  });

  it("edit forwards seed and sampler settings", async () => {
    const fetchMock = vi.spyOn(globalThis, "fetch").mockResolvedValue(jsonResponse(EDIT_RESPONSE));
    const session = newSession({ seed: 123, samplerSteps: 10 });
    drawSomething(session);

    await session.requestEdit(new SkeditClient("http://example.test"));
    const body = JSON.parse(String(fetchMock.mock.calls[0]![1]!.body));
    expect(body.seed).toBe(123);
    expect(body.sampler_steps).toBe(10);
    expect(body.base_image).toBeUndefined();
  });

  it("does nothing with an empty raster", async () => {
    const fetchMock = vi.spyOn(globalThis, "fetch");
    const session = newSession();
    expect(await session.requestRefine(new SkeditClient())).toBeNull();
    expect(await session.requestEdit(new SkeditClient())).toBeNull();
    expect(fetchMock).not.toHaveBeenCalled();
  });

  it("allows only one request in flight", async () => {
    let release: (value: Response) => void = () => {};
    const gate = new Promise<Response>((resolve) => (release = resolve));
    const fetchMock = vi.spyOn(globalThis, "fetch").mockReturnValue(gate);
    const session = newSession();
    drawSomething(session);

    const client = new SkeditClient();
    const first = session.requestEdit(client);
    expect(session.requestPending).toBe(true);
    expect(await session.requestEdit(client)).toBeNull(); // rejected while busy
    release(jsonResponse(EDIT_RESPONSE));
    expect((await first)?.seed).toBe(7);
    expect(session.requestPending).toBe(false);
    expect(fetchMock).toHaveBeenCalledOnce();
  });
});

describe("open contour handling", () => {
  it("shows a hint and preserves the session", async () => {
    vi.spyOn(globalThis, "fetch").mockResolvedValue(
      jsonResponse({ detail: { error: "OpenContour", message: "sketch contour is not closed" } }, 422),
    );
    const session = newSession();
    drawSomething(session);
    const strokes = session.raster.data.slice();

    const result = await session.requestEdit(new SkeditClient());
    expect(result).toBeNull();
    expect(session.hint).toBe("close your contour");
    expect(session.raster.data).toEqual(strokes); // strokes untouched
    expect(session.requestPending).toBe(false);
    expect(session.undo()).toBe(true); // history untouched too
  });

  it("clears the hint on the next stroke", async () => {
    vi.spyOn(globalThis, "fetch").mockResolvedValue(
      jsonResponse({ detail: { error: "OpenContour", message: "open" } }, 422),
    );
    const session = newSession();
    drawSomething(session);
    await session.requestEdit(new SkeditClient());
    expect(session.hint).not.toBeNull();
    session.applyStroke([{ x: 5, y: 5 }]);
    expect(session.hint).toBeNull();
  });

  it("other 4xx failures surface as errors", async () => {
    vi.spyOn(globalThis, "fetch").mockResolvedValue(jsonResponse({ detail: "unknown volume" }, 404));
    const session = newSession();
    drawSomething(session);
    await expect(session.requestEdit(new SkeditClient())).rejects.toThrow(/404/);
    expect(session.requestPending).toBe(false);
  });

  it("OpenContourError carries the server message", () => {
    const error = new OpenContourError("be more careful");
    expect(error.message).toBe("be more careful");
    expect(error.name).toBe("OpenContourError");
  });
});

describe("progression chaining", () => {
  it("second edit uses the first response's edited image as its base", async () => {
    const firstEdited = bytesToBase64(new StrokeRaster(32, 32).toPng());
    const fetchMock = vi
      .spyOn(globalThis, "fetch")
      .mockResolvedValueOnce(jsonResponse({ ...EDIT_RESPONSE, edited: firstEdited }))
      .mockResolvedValueOnce(jsonResponse(EDIT_RESPONSE));
    const session = newSession();
    const client = new SkeditClient();

    drawSomething(session);
    await session.requestEdit(client);
    expect(session.useAsBase()).toBe(true);
    expect(session.chain).toHaveLength(1);

    session.clearStrokes();
    session.applyStroke([{ x: 12, y: 12 }]);
    await session.requestEdit(client);

    const secondBody = JSON.parse(String(fetchMock.mock.calls[1]![1]!.body));
    expect(secondBody.base_image).toBe(firstEdited);
  });

  it("useAsBase requires a completed edit", () => {
    expect(newSession().useAsBase()).toBe(false);
  });
});
