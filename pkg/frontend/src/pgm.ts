/** Decoder for the base64 binary-PGM (P5) images the service sends. */

export interface GrayImage {
  width: number;
  height: number;
  gray: Uint8Array;
}

export function decodeBase64(b64: string): Uint8Array {
  const text = atob(b64);
  const bytes = new Uint8Array(text.length);
  for (let i = 0; i < text.length; i++) {
    bytes[i] = text.charCodeAt(i);
  }
  return bytes;
}

/**
 * Parse a binary PGM: "P5", whitespace-separated width/height/maxval
 * (with # comments), one byte of whitespace, then width*height samples.
 */
export function parsePgm(bytes: Uint8Array): GrayImage {
  if (bytes.length < 2 || bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new Error("not a binary PGM (missing P5 magic)");
  }
  const fields: number[] = [];
  let pos = 2;
  let current = "";
  while (fields.length < 3 && pos < bytes.length) {
    const b = bytes[pos]!;
    pos++;
    const ch = String.fromCharCode(b);
    if (ch === "#") {
      while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
    } else if (/\s/.test(ch)) {
      if (current) {
        fields.push(Number(current));
        current = "";
      }
    } else {
      current += ch;
    }
  }
  if (fields.length < 3) {
    throw new Error("truncated PGM header");
  }
  const [width, height, maxval] = fields as [number, number, number];
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`bad PGM dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new Error(`unsupported PGM maxval ${maxval}`);
  }
  const gray = bytes.slice(pos, pos + width * height);
  if (gray.length !== width * height) {
    throw new Error("PGM pixel data shorter than header promises");
  }
  return { width, height, gray };
}

export function decodePgmBase64(b64: string): GrayImage {
  return parsePgm(decodeBase64(b64));
}

/** Expand grayscale to the RGBA layout canvas ImageData expects. */
export function toRgba(img: GrayImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(img.width * img.height * 4);
  for (let i = 0; i < img.gray.length; i++) {
    const v = img.gray[i]!;
    out[i * 4] = v;
    out[i * 4 + 1] = v;
    out[i * 4 + 2] = v;
    out[i * 4 + 3] = 255;
  }
  return out;
}
