// Decoding of the two slice payload formats and the difference image.

export interface SliceImage {
    width: number;
    height: number;
    pixels: Float32Array; // row-major, range [0, 1]
}

/** Parse a binary P5 PGM (maxval 255) into a float image. */
export function parsePgm(buf: ArrayBuffer): SliceImage {
    const bytes = new Uint8Array(buf);
    // header: "P5\n<w> <h>\n255\n" — tokenize up to 4 whitespace-separated fields
    const fields: string[] = [];
    let i = 0;
    while (fields.length < 4 && i < bytes.length) {
        while (i < bytes.length && isSpace(bytes[i])) i++;
        let tok = "";
        while (i < bytes.length && !isSpace(bytes[i])) tok += String.fromCharCode(bytes[i++]);
        fields.push(tok);
    }
    i++; // single whitespace after maxval
    if (fields[0] !== "P5") throw new Error("not a P5 PGM");
    const width = parseInt(fields[1], 10);
    const height = parseInt(fields[2], 10);
    const maxval = parseInt(fields[3], 10);
    if (!(width > 0) || !(height > 0) || !(maxval > 0)) {
        throw new Error("bad PGM header");
    }
    if (bytes.length - i < width * height) throw new Error("truncated PGM payload");
    const pixels = new Float32Array(width * height);
    for (let k = 0; k < width * height; k++) pixels[k] = bytes[i + k] / maxval;
    return { width, height, pixels };
}

function isSpace(c: number): boolean {
    return c === 0x20 || c === 0x0a || c === 0x0d || c === 0x09;
}

/** Interpret a raw little-endian float32 payload with known dimensions. */
export function parseF32(buf: ArrayBuffer, width: number, height: number): SliceImage {
    if (buf.byteLength !== width * height * 4) {
        throw new Error(`expected ${width * height * 4} bytes, got ${buf.byteLength}`);
    }
    return { width, height, pixels: new Float32Array(buf.slice(0)) };
}

/** Per-pixel absolute difference of two same-sized images. */
export function absDifference(a: SliceImage, b: SliceImage): SliceImage {
    if (a.width !== b.width || a.height !== b.height) {
        throw new Error("difference images must share dimensions");
    }
    const pixels = new Float32Array(a.pixels.length);
    for (let k = 0; k < pixels.length; k++) {
        pixels[k] = Math.abs(a.pixels[k] - b.pixels[k]);
    }
    return { width: a.width, height: a.height, pixels };
}

/** Grayscale RGBA bytes for putImageData. */
export function toRgba(img: SliceImage): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(new ArrayBuffer(img.width * img.height * 4));
    for (let k = 0; k < img.pixels.length; k++) {
        const v = Math.round(Math.min(Math.max(img.pixels[k], 0), 1) * 255);
        out[4 * k] = v;
        out[4 * k + 1] = v;
        out[4 * k + 2] = v;
        out[4 * k + 3] = 255;
    }
    return out;
}
