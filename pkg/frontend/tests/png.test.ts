import { describe, expect, it } from "vitest";

import { base64ToBytes, bytesToBase64, decodeGray8, encodeGray8 } from "../src/png";

function patterned(width: number, height: number): Uint8Array {
  const pixels = new Uint8Array(width * height);
  for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 37 + 11) % 256;
  return pixels;
}

describe("gray8 png codec", () => {
  it("round trips pixels bit exactly", () => {
    const pixels = patterned(23, 17);
    const decoded = decodeGray8(encodeGray8(23, 17, pixels));
    expect(decoded.width).toBe(23);
    expect(decoded.height).toBe(17);
    expect(decoded.pixels).toEqual(pixels);
  });

  it("round trips a raster larger than one stored deflate block", () => {
    // 300x300 scanlines exceed the 65535-byte stored block limit
    const pixels = patterned(300, 300);
    expect(decodeGray8(encodeGray8(300, 300, pixels)).pixels).toEqual(pixels);
  });

  it("encoding is deterministic", () => {
    const pixels = patterned(16, 16);
    expect(encodeGray8(16, 16, pixels)).toEqual(encodeGray8(16, 16, pixels));
  });

  it("starts with the png signature", () => {
    const bytes = encodeGray8(4, 4, new Uint8Array(16));
    expect(Array.from(bytes.subarray(0, 8))).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  });

  it("rejects a mismatched pixel buffer", () => {
    expect(() => encodeGray8(4, 4, new Uint8Array(15))).toThrow(/length/);
  });

  it("rejects bytes without the signature", () => {
    expect(() => decodeGray8(new Uint8Array([1, 2, 3, 4, 5, 6, 7, 8]))).toThrow(/signature/);
  });

  it("rejects unsupported color formats", () => {
    const bytes = encodeGray8(4, 4, new Uint8Array(16));
    const corrupted = bytes.slice();
    corrupted[8 + 8 + 9] = 2; // IHDR color type -> truecolor
    expect(() => decodeGray8(corrupted)).toThrow(/grayscale/);
  });

  it("base64 helpers invert each other", () => {
    const bytes = patterned(10, 7);
    expect(base64ToBytes(bytesToBase64(bytes))).toEqual(bytes);
  });
});
