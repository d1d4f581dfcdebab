// Minimal 8-bit grayscale PNG codec for the headless client path (tests and
// node tooling). Browsers use canvas decoding instead; masks produced here
// and by the server are compared at the pixel level, so encoder differences
// in compression never matter.

import { deflateSync, inflateSync } from 'node:zlib';

const SIGNATURE = Uint8Array.from([137, 80, 78, 71, 13, 10, 26, 10]);

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

function crc32(...parts: Uint8Array[]): number {
  let c = 0xffffffff;
  for (const buf of parts) {
    for (let i = 0; i < buf.length; i++) {
      c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
    }
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const dv = new DataView(out.buffer);
  dv.setUint32(0, data.length);
  const typeBytes = new TextEncoder().encode(type);
  out.set(typeBytes, 4);
  out.set(data, 8);
  dv.setUint32(8 + data.length, crc32(typeBytes, data));
  return out;
}

export interface GrayPng {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major levels 0..255
}

export function encodeGrayPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  if (pixels.length !== width * height) throw new Error('pixel buffer size mismatch');
  const ihdr = new Uint8Array(13);
  const dv = new DataView(ihdr.buffer);
  dv.setUint32(0, width);
  dv.setUint32(4, height);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 0;   // color type: grayscale
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter
  ihdr[12] = 0;  // interlace
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter type 0 per row
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const idat = new Uint8Array(deflateSync(raw));
  const parts = [SIGNATURE, chunk('IHDR', ihdr), chunk('IDAT', idat),
                 chunk('IEND', new Uint8Array(0))];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export function decodeGrayPng(data: Uint8Array): GrayPng {
  for (let i = 0; i < 8; i++) {
    if (data[i] !== SIGNATURE[i]) throw new Error('not a PNG file');
  }
  let off = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  const idat: Uint8Array[] = [];
  while (off < data.length) {
    const dv = new DataView(data.buffer, data.byteOffset + off);
    const len = dv.getUint32(0);
    const type = new TextDecoder().decode(data.subarray(off + 4, off + 8));
    const body = data.subarray(off + 8, off + 8 + len);
    if (type === 'IHDR') {
      const hv = new DataView(body.buffer, body.byteOffset);
      width = hv.getUint32(0);
      height = hv.getUint32(4);
      bitDepth = body[8];
      colorType = body[9];
      if (body[12] !== 0) throw new Error('interlaced PNG not supported');
    } else if (type === 'IDAT') {
      idat.push(body);
    } else if (type === 'IEND') {
      break;
    }
    off += 12 + len;
  }
  if (bitDepth !== 8 || colorType !== 0) {
    throw new Error(`unsupported PNG layout: depth ${bitDepth} colortype ${colorType}`);
  }
  const joined = new Uint8Array(idat.reduce((n, p) => n + p.length, 0));
  let p = 0;
  for (const part of idat) {
    joined.set(part, p);
    p += part.length;
  }
  const raw = new Uint8Array(inflateSync(joined));
  const stride = width + 1;
  if (raw.length !== stride * height) throw new Error('bad PNG payload size');
  const pixels = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * stride];
    const row = raw.subarray(y * stride + 1, (y + 1) * stride);
    const out = pixels.subarray(y * width, (y + 1) * width);
    const prev = y > 0 ? pixels.subarray((y - 1) * width, y * width) : null;
    for (let x = 0; x < width; x++) {
      const a = x > 0 ? out[x - 1] : 0;
      const b = prev ? prev[x] : 0;
      const c = x > 0 && prev ? prev[x - 1] : 0;
      let v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v = (v + a) & 0xff; break;
        case 2: v = (v + b) & 0xff; break;
        case 3: v = (v + ((a + b) >> 1)) & 0xff; break;
        case 4: v = (v + paeth(a, b, c)) & 0xff; break;
        default: throw new Error(`unknown PNG filter ${filter}`);
      }
      out[x] = v;
    }
  }
  return { width, height, pixels };
}

export function maskBitsFromPng(data: Uint8Array): { width: number; height: number; bits: Uint8Array } {
  const { width, height, pixels } = decodeGrayPng(data);
  const bits = new Uint8Array(pixels.length);
  for (let i = 0; i < pixels.length; i++) {
    const v = pixels[i];
    if (v !== 0 && v !== 255) throw new Error(`non-binary mask level ${v}`);
    bits[i] = v === 255 ? 1 : 0;
  }
  return { width, height, bits };
}

export function maskBitsToPng(bits: Uint8Array, width: number, height: number): Uint8Array {
  const levels = new Uint8Array(bits.length);
  for (let i = 0; i < bits.length; i++) levels[i] = bits[i] ? 255 : 0;
  return encodeGrayPng(levels, width, height);
}
