/**
 * Minimal 8-bit grayscale PNG codec for the stroke wire format.
 *
 * Encoding uses stored (uncompressed) deflate blocks, which every PNG
 * reader accepts; decoding supports exactly what the encoder emits plus a
 * signature/IHDR sanity check. Server-produced PNGs are displayed through
 * data URLs and never pass through this decoder.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]!) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const body = new Uint8Array(4 + payload.length);
  for (let i = 0; i < 4; i++) body[i] = type.charCodeAt(i);
  body.set(payload, 4);
  const out = new Uint8Array(8 + payload.length + 4);
  out.set(u32(payload.length), 0);
  out.set(body, 4);
  out.set(u32(crc32(body)), 8 + payload.length);
  return out;
}

/** Raw scanline bytes (filter 0 per row) wrapped in a stored-deflate zlib stream. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const MAX = 65535;
  for (let offset = 0; offset < raw.length || raw.length === 0; offset += MAX) {
    const slice = raw.subarray(offset, Math.min(offset + MAX, raw.length));
    const final = offset + MAX >= raw.length ? 1 : 0;
    const header = new Uint8Array(5);
    header[0] = final;
    header[1] = slice.length & 0xff;
    header[2] = (slice.length >>> 8) & 0xff;
    header[3] = ~slice.length & 0xff;
    header[4] = (~slice.length >>> 8) & 0xff;
    blocks.push(header, slice);
    if (raw.length === 0) break;
  }
  blocks.push(u32(adler32(raw)));
  const total = blocks.reduce((n, b) => n + b.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const b of blocks) {
    out.set(b, at);
    at += b.length;
  }
  return out;
}

export function encodeGray8(width: number, height: number, pixels: Uint8Array): Uint8Array {
  if (pixels.length !== width * height) {
    throw new Error(`pixel buffer length ${pixels.length} != ${width}x${height}`);
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(width), 0);
  ihdr.set(u32(height), 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 0; // grayscale
  // compression 0, filter 0, interlace 0

  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter type none
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

export interface Gray8 {
  width: number;
  height: number;
  pixels: Uint8Array;
}

export function decodeGray8(bytes: Uint8Array): Gray8 {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG: bad signature");
  }
  let at = 8;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  while (at < bytes.length) {
    const len = ((bytes[at]! << 24) | (bytes[at + 1]! << 16) | (bytes[at + 2]! << 8) | bytes[at + 3]!) >>> 0;
    const type = String.fromCharCode(bytes[at + 4]!, bytes[at + 5]!, bytes[at + 6]!, bytes[at + 7]!);
    const payload = bytes.subarray(at + 8, at + 8 + len);
    if (type === "IHDR") {
      width = ((payload[0]! << 24) | (payload[1]! << 16) | (payload[2]! << 8) | payload[3]!) >>> 0;
      height = ((payload[4]! << 24) | (payload[5]! << 16) | (payload[6]! << 8) | payload[7]!) >>> 0;
      if (payload[8] !== 8 || payload[9] !== 0) {
        throw new Error("decoder only handles 8-bit grayscale");
      }
    } else if (type === "IDAT") {
      idat.push(payload);
    } else if (type === "IEND") {
      break;
    }
    at += 12 + len;
  }
  if (width === 0 || height === 0) throw new Error("missing IHDR");

  const stream = new Uint8Array(idat.reduce((n, p) => n + p.length, 0));
  let sAt = 0;
  for (const p of idat) {
    stream.set(p, sAt);
    sAt += p.length;
  }
  const raw = inflateStored(stream);

  const pixels = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    if (raw[y * (width + 1)] !== 0) {
      throw new Error("decoder only handles filter type 0");
    }
    pixels.set(raw.subarray(y * (width + 1) + 1, (y + 1) * (width + 1)), y * width);
  }
  return { width, height, pixels };
}

/** Inflate a zlib stream consisting solely of stored blocks. */
function inflateStored(stream: Uint8Array): Uint8Array {
  if ((stream[0]! & 0x0f) !== 8) throw new Error("not a zlib deflate stream");
  let at = 2;
  const out: Uint8Array[] = [];
  for (;;) {
    const header = stream[at]!;
    if ((header & 0x06) !== 0) {
      throw new Error("decoder only handles stored deflate blocks");
    }
    const len = stream[at + 1]! | (stream[at + 2]! << 8);
    out.push(stream.subarray(at + 5, at + 5 + len));
    at += 5 + len;
    if (header & 1) break;
  }
  const total = out.reduce((n, p) => n + p.length, 0);
  const raw = new Uint8Array(total);
  let rAt = 0;
  for (const p of out) {
    raw.set(p, rAt);
    rAt += p.length;
  }
  return raw;
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < bytes.length; i++) binary += String.fromCharCode(bytes[i]!);
  // btoa exists in browsers; Buffer in node test runs
  if (typeof btoa === "function") return btoa(binary);
  return Buffer.from(bytes).toString("base64");
}

export function base64ToBytes(text: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(text);
    const out = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(text, "base64"));
}
