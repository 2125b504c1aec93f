import { describe, expect, it } from "vitest";
import { decodeBase64, decodePgmBase64, parsePgm, toRgba } from "../src/pgm.js";

function pgmBase64(width: number, height: number, pixels: number[], header?: string): string {
  const head = header ?? `P5\n${width} ${height}\n255\n`;
  const bytes = new Uint8Array(head.length + pixels.length);
  for (let i = 0; i < head.length; i++) bytes[i] = head.charCodeAt(i);
  bytes.set(pixels, head.length);
  return btoa(String.fromCharCode(...bytes));
}

describe("decodeBase64", () => {
  it("round-trips bytes", () => {
    const bytes = decodeBase64(btoa("P5 ok"));
    expect([...bytes]).toEqual([0x50, 0x35, 0x20, 0x6f, 0x6b]);
  });
});

describe("parsePgm", () => {
  it("reads dimensions and pixels", () => {
    const img = decodePgmBase64(pgmBase64(3, 2, [0, 64, 128, 192, 255, 10]));
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect([...img.gray]).toEqual([0, 64, 128, 192, 255, 10]);
  });

  it("skips header comments", () => {
    const b64 = pgmBase64(2, 1, [5, 6], "P5\n# a comment\n2 1\n255\n");
    const img = decodePgmBase64(b64);
    expect([...img.gray]).toEqual([5, 6]);
  });

  it("rejects a wrong magic number", () => {
    const bytes = new TextEncoder().encode("P6\n1 1\n255\nx");
    expect(() => parsePgm(bytes)).toThrow(/P5/);
  });

  it("rejects truncated pixel data", () => {
    const b64 = pgmBase64(4, 4, [1, 2, 3]);
    expect(() => decodePgmBase64(b64)).toThrow(/shorter/);
  });

  it("rejects a maxval other than 255", () => {
    const b64 = pgmBase64(1, 1, [9], "P5\n1 1\n65535\n");
    expect(() => decodePgmBase64(b64)).toThrow(/maxval/);
  });
});

describe("toRgba", () => {
  it("replicates gray into opaque rgba", () => {
    const rgba = toRgba({ width: 2, height: 1, gray: new Uint8Array([7, 250]) });
    expect([...rgba]).toEqual([7, 7, 7, 255, 250, 250, 250, 255]);
  });
});
