import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { afterEach, beforeEach, describe, expect, it } from 'vitest'

import {
  DisjointnessViolation,
  MissingClassError,
  exportFeatures,
} from '../src/export.js'
import {
  decodeFeatureFile,
  encodeFeatureFile,
  readFeatureFile,
  sha256File,
} from '../src/format.js'
import { decodeNetpbm, ImageDecodeError, loadImage, resize } from '../src/image.js'
import { availableModels, loadModel, ModelLoadError } from '../src/model.js'
import { writeToyFolder, writeToyImage } from './helpers.js'

let work: string

beforeEach(() => {
  work = mkdtempSync(join(tmpdir(), 'foro-export-'))
})

afterEach(() => {
  rmSync(work, { recursive: true, force: true })
})

describe('feature file format', () => {
  it('round-trips bitwise', () => {
    const payload = {
      features: Float32Array.from([1.5, -2.25, 0, 3.125, 7, -0.5]),
      labels: Uint32Array.from([0, 3]),
      dim: 3,
    }
    const blob = encodeFeatureFile(payload)
    expect(encodeFeatureFile(decodeFeatureFile(blob)).equals(blob)).toBe(true)
  })

  it('rejects truncated blobs', () => {
    const blob = encodeFeatureFile({
      features: Float32Array.from([1, 2]),
      labels: Uint32Array.from([0]),
      dim: 2,
    })
    expect(() => decodeFeatureFile(blob.subarray(0, blob.length - 3))).toThrow()
  })
})

describe('netpbm decoding', () => {
  it('decodes PGM written by the toy generator', () => {
    const path = join(work, 'img.pgm')
    writeToyImage(path, 0, 0)
    const image = loadImage(path)
    expect(image.width).toBe(24)
    expect(image.height).toBe(24)
    expect(Math.max(...image.pixels)).toBeLessThanOrEqual(1)
  })

  it('decodes PPM via luminance', () => {
    const raster = Buffer.alloc(3 * 4, 255)
    const blob = Buffer.concat([Buffer.from('P6\n2 2\n255\n'), raster])
    const image = decodeNetpbm(blob)
    expect(image.pixels.every((p) => Math.abs(p - 1) < 1e-9)).toBe(true)
  })

  it('rejects unsupported formats', () => {
    expect(() => decodeNetpbm(Buffer.from('P4\n2 2\n0101'))).toThrow(ImageDecodeError)
  })

  it('area-average resize preserves a constant image', () => {
    const image = { width: 10, height: 6, pixels: new Float64Array(60).fill(0.5) }
    const grid = resize(image, 4)
    expect(grid.every((p) => Math.abs(p - 0.5) < 1e-12)).toBe(true)
  })
})

describe('model registry', () => {
  it('declares its embedding width', () => {
    for (const name of availableModels()) {
      const model = loadModel(name)
      expect(model.embedDim).toBe(Number(name.split('-').pop()))
    }
  })

  it('is deterministic per name', () => {
    const path = join(work, 'img.pgm')
    writeToyImage(path, 1, 2)
    const a = loadModel('toy-vit-16').forward(loadImage(path))
    const b = loadModel('toy-vit-16').forward(loadImage(path))
    expect(Array.from(a)).toEqual(Array.from(b))
  })

  it('differs across model names', () => {
    const path = join(work, 'img.pgm')
    writeToyImage(path, 1, 2)
    const a = loadModel('toy-vit-16').forward(loadImage(path))
    const b = loadModel('toy-vit-32').forward(loadImage(path))
    expect(b.length).not.toBe(a.length)
  })

  it('rejects unknown models', () => {
    expect(() => loadModel('vit-b-16')).toThrow(ModelLoadError)
  })
})

describe('export', () => {
  const classes = ['ant', 'bee', 'cat', 'dog']

  function spec(overrides: object = {}) {
    return {
      root: join(work, 'images'),
      model: 'toy-vit-16',
      taskGroups: [
        ['ant', 'bee'],
        ['cat', 'dog'],
      ],
      outDir: join(work, 'out'),
      batchSize: 4,
      ...overrides,
    }
  }

  beforeEach(() => {
    writeToyFolder(join(work, 'images'), classes, 10)
  })

  it('writes one train/test pair per task plus a manifest', () => {
    const result = exportFeatures(spec())
    expect(result.featureFiles).toHaveLength(4)
    expect(result.embedDim).toBe(16)
    const manifest = JSON.parse(readFileSync(result.manifestPath, 'utf8'))
    expect(manifest.tasks).toHaveLength(2)
    expect(manifest.tasks[0].class_ids).toEqual([0, 1])
    expect(manifest.tasks[1].class_ids).toEqual([2, 3])
  })

  it('manifest checksums match the written files', () => {
    const result = exportFeatures(spec())
    const manifest = JSON.parse(readFileSync(result.manifestPath, 'utf8'))
    for (const task of manifest.tasks) {
      expect(task.sha256.train).toBe(sha256File(join(work, 'out', task.train_file)))
      expect(task.sha256.test).toBe(sha256File(join(work, 'out', task.test_file)))
    }
  })

  it('feature width equals the declared embedding dimension', () => {
    const result = exportFeatures(spec({ model: 'toy-vit-32' }))
    for (const file of result.featureFiles) {
      expect(readFeatureFile(file).dim).toBe(32)
    }
  })

  it('splits each class evenly and alternately', () => {
    const result = exportFeatures(spec())
    const train = readFeatureFile(result.featureFiles[0])
    const test = readFeatureFile(result.featureFiles[1])
    expect(train.labels.length).toBe(10)
    expect(test.labels.length).toBe(10)
    expect(Array.from(new Set(train.labels)).sort()).toEqual([0, 1])
  })

  it('is deterministic end to end', () => {
    const a = exportFeatures(spec({ outDir: join(work, 'a') }))
    const b = exportFeatures(spec({ outDir: join(work, 'b') }))
    a.featureFiles.forEach((file, i) => {
      expect(readFileSync(file).equals(readFileSync(b.featureFiles[i]))).toBe(true)
    })
  })

  it('round-trips bitwise through decode/encode', () => {
    const result = exportFeatures(spec())
    for (const file of result.featureFiles) {
      const blob = readFileSync(file)
      expect(encodeFeatureFile(decodeFeatureFile(blob)).equals(blob)).toBe(true)
    }
  })

  it('rejects overlapping class groups', () => {
    expect(() =>
      exportFeatures(spec({ taskGroups: [['ant', 'bee'], ['bee', 'cat']] })),
    ).toThrow(DisjointnessViolation)
  })

  it('rejects missing class folders', () => {
    expect(() =>
      exportFeatures(spec({ taskGroups: [['ant', 'unicorn']] })),
    ).toThrow(MissingClassError)
  })

  it('batch size does not change the output', () => {
    const a = exportFeatures(spec({ outDir: join(work, 'a'), batchSize: 1 }))
    const b = exportFeatures(spec({ outDir: join(work, 'b'), batchSize: 64 }))
    a.featureFiles.forEach((file, i) => {
      expect(readFileSync(file).equals(readFileSync(b.featureFiles[i]))).toBe(true)
    })
  })

  it('fails cleanly on an undecodable image', () => {
    writeFileSync(join(work, 'images', 'ant', 'broken.pgm'), 'not an image')
    expect(() => exportFeatures(spec())).toThrow(ImageDecodeError)
  })
})
