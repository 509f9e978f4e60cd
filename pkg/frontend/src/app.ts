/**
 * DOM wiring: volume picker, drawing canvas over the slice, four comparison
 * panels (source, refined sketch overlay, edited, difference), progression
 * chaining. All pixel decoding of server images goes through the browser's
 * native PNG support.
 */

import { EditResponse, SkeditClient } from "./api";
import { CanvasSession } from "./session";
import { Point } from "./raster";

const PANEL_SCALE = 2;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  parent?: HTMLElement,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  parent?.appendChild(node);
  return node;
}

function pngUrl(base64: string): string {
  return `data:image/png;base64,${base64}`;
}

async function loadImage(url: string): Promise<HTMLImageElement> {
  const img = new Image();
  img.src = url;
  await img.decode();
  return img;
}

/** Blue-white-red rendering of the difference map using the server's scale. */
async function drawDifference(canvas: HTMLCanvasElement, response: EditResponse): Promise<void> {
  const img = await loadImage(pngUrl(response.difference_map));
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < data.data.length; i += 4) {
    const t = data.data[i]! / 255; // normalized |difference|
    data.data[i] = Math.round(255 * t);
    data.data[i + 1] = Math.round(255 * (1 - t) * (1 - t));
    data.data[i + 2] = Math.round(255 * (1 - t));
  }
  ctx.putImageData(data, 0, 0);
}

export async function startApp(root: HTMLElement, baseUrl?: string): Promise<void> {
  const client = new SkeditClient(baseUrl);
  root.innerHTML = "";

  const toolbar = el("div", { class: "toolbar" }, root);
  const volumeSelect = el("select", {}, toolbar);
  const brushLabel = el("label", {}, toolbar);
  brushLabel.textContent = "brush ";
  const brushInput = el("input", { type: "number", min: "1", max: "12", value: "3" }, brushLabel);
  const eraserLabel = el("label", {}, toolbar);
  eraserLabel.textContent = " eraser ";
  const eraserInput = el("input", { type: "checkbox" }, eraserLabel);
  const undoButton = el("button", {}, toolbar);
  undoButton.textContent = "undo";
  const clearButton = el("button", {}, toolbar);
  clearButton.textContent = "clear";
  const refineButton = el("button", {}, toolbar);
  refineButton.textContent = "preview refine";
  const editButton = el("button", {}, toolbar);
  editButton.textContent = "edit";
  const chainButton = el("button", {}, toolbar);
  chainButton.textContent = "use as base";
  const hintBox = el("span", { class: "hint" }, toolbar);

  const panels = el("div", { class: "panels" }, root);
  const drawPanel = el("div", {}, panels);
  el("h3", {}, drawPanel).textContent = "source + sketch";
  const drawCanvas = el("canvas", {}, drawPanel);
  const refinedPanel = el("div", {}, panels);
  el("h3", {}, refinedPanel).textContent = "refined sketch";
  const refinedCanvas = el("canvas", {}, refinedPanel);
  const editedPanel = el("div", {}, panels);
  el("h3", {}, editedPanel).textContent = "edited";
  const editedImg = el("img", {}, editedPanel);
  const diffPanel = el("div", {}, panels);
  el("h3", {}, diffPanel).textContent = "difference";
  const diffCanvas = el("canvas", {}, diffPanel);
  const metricsBox = el("pre", { class: "metrics" }, root);

  const volumes = await client.volumes();
  for (const volume of volumes) {
    const option = el("option", { value: volume.id }, volumeSelect);
    option.textContent = `${volume.id} (${volume.slices} slices, ${volume.modality})`;
  }
  if (volumes.length === 0) {
    hintBox.textContent = "no volumes on the server";
    return;
  }

  let session: CanvasSession | null = null;
  let sliceImage: HTMLImageElement | null = null;

  async function openVolume(volumeId: string): Promise<void> {
    sliceImage = await loadImage(client.sliceUrl(volumeId, 0));
    session = new CanvasSession({
      volumeId,
      sliceIndex: 0,
      width: sliceImage.naturalWidth,
      height: sliceImage.naturalHeight,
    });
    drawCanvas.width = sliceImage.naturalWidth * PANEL_SCALE;
    drawCanvas.height = sliceImage.naturalHeight * PANEL_SCALE;
    render();
  }

  function render(): void {
    if (!session || !sliceImage) return;
    const ctx = drawCanvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(sliceImage, 0, 0, drawCanvas.width, drawCanvas.height);
    ctx.fillStyle = "rgba(255, 80, 80, 0.9)";
    const { width, data } = session.raster;
    for (let i = 0; i < data.length; i++) {
      if (data[i]! > 0) {
        ctx.fillRect((i % width) * PANEL_SCALE, Math.floor(i / width) * PANEL_SCALE, PANEL_SCALE, PANEL_SCALE);
      }
    }
    hintBox.textContent = session.hint ?? "";
    const busy = session.requestPending;
    refineButton.disabled = busy;
    editButton.disabled = busy;
  }

  function canvasPoint(event: PointerEvent): Point {
    const rect = drawCanvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * (drawCanvas.width / PANEL_SCALE),
      y: ((event.clientY - rect.top) / rect.height) * (drawCanvas.height / PANEL_SCALE),
    };
  }

  let path: Point[] = [];
  drawCanvas.addEventListener("pointerdown", (event) => {
    path = [canvasPoint(event)];
    drawCanvas.setPointerCapture(event.pointerId);
  });
  drawCanvas.addEventListener("pointermove", (event) => {
    if (path.length === 0) return;
    path.push(canvasPoint(event));
  });
  drawCanvas.addEventListener("pointerup", () => {
    if (!session || path.length === 0) return;
    session.brushRadius = Number(brushInput.value) || 3;
    session.eraser = eraserInput.checked;
    session.applyStroke(path);
    path = [];
    render();
  });

  undoButton.addEventListener("click", () => {
    session?.undo();
    render();
  });
  clearButton.addEventListener("click", () => {
    session?.clearStrokes();
    render();
  });

  refineButton.addEventListener("click", async () => {
    if (!session) return;
    render();
    const refined = await session.requestRefine(client);
    if (refined) {
      const img = await loadImage(pngUrl(refined.binary));
      refinedCanvas.width = img.naturalWidth;
      refinedCanvas.height = img.naturalHeight;
      refinedCanvas.getContext("2d")!.drawImage(img, 0, 0);
    }
    render();
  });

  editButton.addEventListener("click", async () => {
    if (!session) return;
    render();
    const edit = await session.requestEdit(client);
    if (edit) {
      editedImg.src = pngUrl(edit.edited);
      await drawDifference(diffCanvas, edit);
      const m = edit.metrics;
      metricsBox.textContent =
        `nrmse ${m.nrmse.toFixed(4)}  ssim ${m.ssim.toFixed(4)}  psnr ${m.psnr.toFixed(2)} dB` +
        `  seed ${edit.seed}  diff scale ${edit.difference_scale.toFixed(4)}`;
    }
    render();
  });

  chainButton.addEventListener("click", async () => {
    if (!session?.useAsBase()) return;
    // the accepted edit becomes the working slice for the next step
    sliceImage = await loadImage(pngUrl(session.chain[session.chain.length - 1]!.edited));
    session.raster.clear();
    render();
  });

  volumeSelect.addEventListener("change", () => void openVolume(volumeSelect.value));
  await openVolume(volumes[0]!.id);
}
