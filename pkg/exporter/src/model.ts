/**
 * Frozen feature backbones behind a model registry.
 *
 * The registry ships a deterministic seeded toy vision transformer family
 * ("toy-vit-<width>"): weights are drawn from a PRNG keyed on the model
 * name, so the same model name always yields bit-identical features on the
 * same inputs. Real pre-trained checkpoints can be added as new registry
 * entries; everything downstream only sees `embedDim` and `forward`.
 */
import { GrayImage, resize } from './image.js'

export class ModelLoadError extends Error {}

export interface FeatureModel {
  name: string
  /** Declared embedding width; every exported feature row has this length. */
  embedDim: number
  forward(image: GrayImage): Float64Array
}

// -- seeded weight generation ------------------------------------------------

function splitmix64(state: bigint): [bigint, bigint] {
  const mask = (1n << 64n) - 1n
  state = (state + 0x9e3779b97f4a7c15n) & mask
  let z = state
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & mask
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & mask
  return [state, z ^ (z >> 31n)]
}

class SeededNormals {
  private state: bigint
  private spare: number | null = null

  constructor(seed: bigint) {
    this.state = seed & ((1n << 64n) - 1n)
  }

  private uniform(): number {
    const [next, value] = splitmix64(this.state)
    this.state = next
    return Number(value >> 11n) / 2 ** 53
  }

  normal(): number {
    if (this.spare !== null) {
      const value = this.spare
      this.spare = null
      return value
    }
    const u = Math.max(this.uniform(), Number.MIN_VALUE)
    const v = this.uniform()
    const radius = Math.sqrt(-2 * Math.log(u))
    this.spare = radius * Math.sin(2 * Math.PI * v)
    return radius * Math.cos(2 * Math.PI * v)
  }

  matrix(rows: number, cols: number, scale: number): Float64Array {
    const out = new Float64Array(rows * cols)
    for (let i = 0; i < out.length; i++) out[i] = this.normal() * scale
    return out
  }
}

function nameSeed(name: string): bigint {
  let hash = 0xcbf29ce484222325n // FNV-1a
  const mask = (1n << 64n) - 1n
  for (const ch of name) {
    hash = ((hash ^ BigInt(ch.charCodeAt(0))) * 0x100000001b3n) & mask
  }
  return hash
}

// -- toy vision transformer --------------------------------------------------

const GRID = 16 // input resized to GRID x GRID pixels
const PATCH = 4 // PATCH x PATCH pixels per patch token
const LAYERS = 2

interface Block {
  wq: Float64Array
  wk: Float64Array
  wv: Float64Array
  wo: Float64Array
  w1: Float64Array
  w2: Float64Array
}

function matmul(
  x: Float64Array,
  w: Float64Array,
  rows: number,
  inner: number,
  cols: number,
): Float64Array {
  const out = new Float64Array(rows * cols)
  for (let r = 0; r < rows; r++) {
    for (let k = 0; k < inner; k++) {
      const xv = x[r * inner + k]
      if (xv === 0) continue
      for (let c = 0; c < cols; c++) out[r * cols + c] += xv * w[k * cols + c]
    }
  }
  return out
}

function layerNorm(x: Float64Array, rows: number, dim: number): Float64Array {
  const out = new Float64Array(x.length)
  for (let r = 0; r < rows; r++) {
    let mean = 0
    for (let c = 0; c < dim; c++) mean += x[r * dim + c]
    mean /= dim
    let variance = 0
    for (let c = 0; c < dim; c++) {
      const d = x[r * dim + c] - mean
      variance += d * d
    }
    variance /= dim
    const inv = 1 / Math.sqrt(variance + 1e-6)
    for (let c = 0; c < dim; c++) out[r * dim + c] = (x[r * dim + c] - mean) * inv
  }
  return out
}

class ToyViT implements FeatureModel {
  readonly name: string
  readonly embedDim: number
  private readonly patchEmbed: Float64Array // (PATCH*PATCH, d)
  private readonly clsToken: Float64Array
  private readonly posEmbed: Float64Array // (tokens, d)
  private readonly blocks: Block[]
  private readonly tokens: number

  constructor(name: string, embedDim: number) {
    this.name = name
    this.embedDim = embedDim
    const patches = (GRID / PATCH) ** 2
    this.tokens = 1 + patches
    const rng = new SeededNormals(nameSeed(name))
    const d = embedDim
    const hidden = 2 * d
    this.patchEmbed = rng.matrix(PATCH * PATCH, d, 1 / Math.sqrt(PATCH * PATCH))
    this.clsToken = rng.matrix(1, d, 1)
    this.posEmbed = rng.matrix(this.tokens, d, 1)
    this.blocks = []
    for (let layer = 0; layer < LAYERS; layer++) {
      this.blocks.push({
        wq: rng.matrix(d, d, 1 / Math.sqrt(d)),
        wk: rng.matrix(d, d, 1 / Math.sqrt(d)),
        wv: rng.matrix(d, d, 1 / Math.sqrt(d)),
        wo: rng.matrix(d, d, 1 / Math.sqrt(d)),
        w1: rng.matrix(d, hidden, 1 / Math.sqrt(d)),
        w2: rng.matrix(hidden, d, 1 / Math.sqrt(hidden)),
      })
    }
  }

  private attend(x: Float64Array, block: Block): Float64Array {
    const d = this.embedDim
    const t = this.tokens
    const u = layerNorm(x, t, d)
    const q = matmul(u, block.wq, t, d, d)
    const k = matmul(u, block.wk, t, d, d)
    const v = matmul(u, block.wv, t, d, d)
    const out = new Float64Array(t * d)
    const scores = new Float64Array(t)
    for (let i = 0; i < t; i++) {
      let max = -Infinity
      for (let j = 0; j < t; j++) {
        let dot = 0
        for (let c = 0; c < d; c++) dot += q[i * d + c] * k[j * d + c]
        scores[j] = dot / Math.sqrt(d)
        if (scores[j] > max) max = scores[j]
      }
      let sum = 0
      for (let j = 0; j < t; j++) {
        scores[j] = Math.exp(scores[j] - max)
        sum += scores[j]
      }
      for (let j = 0; j < t; j++) {
        const weight = scores[j] / sum
        for (let c = 0; c < d; c++) out[i * d + c] += weight * v[j * d + c]
      }
    }
    return matmul(out, block.wo, t, d, d)
  }

  forward(image: GrayImage): Float64Array {
    const d = this.embedDim
    const grid = resize(image, GRID)
    const perSide = GRID / PATCH
    const patches = new Float64Array(perSide * perSide * PATCH * PATCH)
    let idx = 0
    for (let py = 0; py < perSide; py++) {
      for (let px = 0; px < perSide; px++) {
        for (let y = 0; y < PATCH; y++) {
          for (let x = 0; x < PATCH; x++) {
            patches[idx++] = grid[(py * PATCH + y) * GRID + (px * PATCH + x)]
          }
        }
      }
    }
    let tokens = new Float64Array(this.tokens * d)
    tokens.set(this.clsToken, 0)
    tokens.set(matmul(patches, this.patchEmbed, this.tokens - 1, PATCH * PATCH, d), d)
    for (let i = 0; i < tokens.length; i++) tokens[i] += this.posEmbed[i]

    for (const block of this.blocks) {
      const attended = this.attend(tokens, block)
      for (let i = 0; i < tokens.length; i++) tokens[i] += attended[i]
      const u = layerNorm(tokens, this.tokens, d)
      const hidden = matmul(u, block.w1, this.tokens, d, 2 * d)
      for (let i = 0; i < hidden.length; i++) hidden[i] = Math.tanh(hidden[i])
      const mlp = matmul(hidden, block.w2, this.tokens, 2 * d, d)
      for (let i = 0; i < tokens.length; i++) tokens[i] += mlp[i]
    }
    return tokens.slice(0, d) // final-layer CLS row
  }
}

const REGISTRY: Record<string, () => FeatureModel> = {
  'toy-vit-16': () => new ToyViT('toy-vit-16', 16),
  'toy-vit-32': () => new ToyViT('toy-vit-32', 32),
  'toy-vit-64': () => new ToyViT('toy-vit-64', 64),
}

export function availableModels(): string[] {
  return Object.keys(REGISTRY).sort()
}

export function loadModel(name: string): FeatureModel {
  const build = REGISTRY[name]
  if (!build) {
    throw new ModelLoadError(
      `unknown model ${name!}; available: ${availableModels().join(', ')}`,
    )
  }
  return build()
}
