/**
 * Minimal Netpbm decoding (binary PGM "P5" and PPM "P6") plus the fixed
 * resize the model frontend expects. Netpbm keeps the tool dependency-free;
 * toy datasets are generated in the same format.
 */
import { readFileSync } from 'node:fs'

export class ImageDecodeError extends Error {}

export interface GrayImage {
  width: number
  height: number
  /** Row-major luminance in [0, 1]. */
  pixels: Float64Array
}

function parseHeader(blob: Buffer): {
  magic: string
  width: number
  height: number
  maxval: number
  offset: number
} {
  // magic, width, height, maxval as whitespace-separated tokens with
  // optional '#' comments, then a single whitespace byte before the raster
  const tokens: string[] = []
  let i = 0
  while (tokens.length < 4 && i < blob.length) {
    const ch = String.fromCharCode(blob[i])
    if (ch === '#') {
      while (i < blob.length && blob[i] !== 0x0a) i++
    } else if (/\s/.test(ch)) {
      i++
    } else {
      let start = i
      while (i < blob.length && !/\s/.test(String.fromCharCode(blob[i]))) i++
      tokens.push(blob.toString('ascii', start, i))
    }
  }
  if (tokens.length < 4) throw new ImageDecodeError('truncated Netpbm header')
  i++ // the single whitespace terminating the maxval token
  const [magic, w, h, m] = tokens
  const width = Number(w)
  const height = Number(h)
  const maxval = Number(m)
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new ImageDecodeError(`bad Netpbm dimensions ${w}x${h}`)
  }
  if (!Number.isInteger(maxval) || maxval < 1 || maxval > 255) {
    throw new ImageDecodeError(`unsupported maxval ${m}`)
  }
  return { magic, width, height, maxval, offset: i }
}

export function decodeNetpbm(blob: Buffer): GrayImage {
  const { magic, width, height, maxval, offset } = parseHeader(blob)
  const count = width * height
  const pixels = new Float64Array(count)
  if (magic === 'P5') {
    if (blob.length < offset + count) {
      throw new ImageDecodeError('truncated PGM raster')
    }
    for (let i = 0; i < count; i++) pixels[i] = blob[offset + i] / maxval
  } else if (magic === 'P6') {
    if (blob.length < offset + 3 * count) {
      throw new ImageDecodeError('truncated PPM raster')
    }
    for (let i = 0; i < count; i++) {
      const r = blob[offset + 3 * i]
      const g = blob[offset + 3 * i + 1]
      const b = blob[offset + 3 * i + 2]
      pixels[i] = (0.299 * r + 0.587 * g + 0.114 * b) / maxval
    }
  } else {
    throw new ImageDecodeError(`unsupported image magic ${magic!}`)
  }
  return { width, height, pixels }
}

export function loadImage(path: string): GrayImage {
  let blob: Buffer
  try {
    blob = readFileSync(path)
  } catch (err) {
    throw new ImageDecodeError(`cannot read ${path}: ${err}`)
  }
  try {
    return decodeNetpbm(blob)
  } catch (err) {
    if (err instanceof ImageDecodeError) {
      throw new ImageDecodeError(`${path}: ${err.message}`)
    }
    throw err
  }
}

/** Area-average resize to a square side x side grid. */
export function resize(image: GrayImage, side: number): Float64Array {
  const out = new Float64Array(side * side)
  for (let row = 0; row < side; row++) {
    const y0 = Math.floor((row * image.height) / side)
    const y1 = Math.max(y0 + 1, Math.floor(((row + 1) * image.height) / side))
    for (let col = 0; col < side; col++) {
      const x0 = Math.floor((col * image.width) / side)
      const x1 = Math.max(x0 + 1, Math.floor(((col + 1) * image.width) / side))
      let sum = 0
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) sum += image.pixels[y * image.width + x]
      }
      out[row * side + col] = sum / ((y1 - y0) * (x1 - x0))
    }
  }
  return out
}
