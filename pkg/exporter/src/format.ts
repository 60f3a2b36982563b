/**
 * FOROFEAT feature files and the manifest the engine's loader consumes.
 *
 * Layout (little-endian):
 *   magic "FOROFEAT" | u16 version=1 | u32 n | u32 d
 *   | n*d float32 features (row-major) | n uint32 labels
 */
import { createHash } from 'node:crypto'
import { readFileSync, writeFileSync } from 'node:fs'
import { basename } from 'node:path'

export const FEATURE_MAGIC = 'FOROFEAT'
export const FEATURE_VERSION = 1

export interface FeaturePayload {
  features: Float32Array // n * d, row-major
  labels: Uint32Array // n
  dim: number
}

export class FormatError extends Error {}

export function encodeFeatureFile(payload: FeaturePayload): Buffer {
  const { features, labels, dim } = payload
  const n = labels.length
  if (features.length !== n * dim) {
    throw new FormatError(
      `feature buffer length ${features.length} != n*d = ${n * dim}`,
    )
  }
  const header = Buffer.alloc(FEATURE_MAGIC.length + 2 + 4 + 4)
  header.write(FEATURE_MAGIC, 0, 'ascii')
  header.writeUInt16LE(FEATURE_VERSION, FEATURE_MAGIC.length)
  header.writeUInt32LE(n, FEATURE_MAGIC.length + 2)
  header.writeUInt32LE(dim, FEATURE_MAGIC.length + 6)
  const body = Buffer.alloc(4 * features.length + 4 * n)
  for (let i = 0; i < features.length; i++) {
    body.writeFloatLE(features[i], 4 * i)
  }
  for (let i = 0; i < n; i++) {
    body.writeUInt32LE(labels[i], 4 * features.length + 4 * i)
  }
  return Buffer.concat([header, body])
}

export function decodeFeatureFile(blob: Buffer): FeaturePayload {
  const headerLen = FEATURE_MAGIC.length + 10
  if (
    blob.length < headerLen ||
    blob.toString('ascii', 0, FEATURE_MAGIC.length) !== FEATURE_MAGIC
  ) {
    throw new FormatError('not a FOROFEAT file')
  }
  const version = blob.readUInt16LE(FEATURE_MAGIC.length)
  if (version !== FEATURE_VERSION) {
    throw new FormatError(`unsupported version ${version}`)
  }
  const n = blob.readUInt32LE(FEATURE_MAGIC.length + 2)
  const dim = blob.readUInt32LE(FEATURE_MAGIC.length + 6)
  if (blob.length !== headerLen + 4 * n * dim + 4 * n) {
    throw new FormatError(`truncated FOROFEAT file (n=${n}, d=${dim})`)
  }
  const features = new Float32Array(n * dim)
  for (let i = 0; i < features.length; i++) {
    features[i] = blob.readFloatLE(headerLen + 4 * i)
  }
  const labels = new Uint32Array(n)
  for (let i = 0; i < n; i++) {
    labels[i] = blob.readUInt32LE(headerLen + 4 * n * dim + 4 * i)
  }
  return { features, labels, dim }
}

export function writeFeatureFile(path: string, payload: FeaturePayload): void {
  writeFileSync(path, encodeFeatureFile(payload))
}

export function readFeatureFile(path: string): FeaturePayload {
  return decodeFeatureFile(readFileSync(path))
}

export function sha256File(path: string): string {
  return createHash('sha256').update(readFileSync(path)).digest('hex')
}

export interface ManifestEntry {
  task_id: number
  class_ids: number[]
  train_file: string
  test_file: string
}

/** File paths in entries are relative to the manifest's directory. */
export function writeManifest(
  manifestPath: string,
  baseDir: string,
  entries: ManifestEntry[],
): void {
  const tasks = entries.map((entry) => ({
    task_id: entry.task_id,
    class_ids: entry.class_ids,
    train_file: basename(entry.train_file),
    test_file: basename(entry.test_file),
    sha256: {
      train: sha256File(`${baseDir}/${basename(entry.train_file)}`),
      test: sha256File(`${baseDir}/${basename(entry.test_file)}`),
    },
  }))
  writeFileSync(manifestPath, JSON.stringify({ tasks }, null, 2) + '\n')
}
