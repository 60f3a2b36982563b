/**
 * Folder scan -> batched model inference -> FOROFEAT files + manifest.
 *
 * The image root uses the class-per-subfolder layout. The task partition is
 * an ordered list of class-name groups; class ids are assigned by position
 * across that flattened order. Within each class, files are sorted by name
 * and split alternately (even index train, odd index test), so an export is
 * a pure function of the folder contents, the model, and the partition.
 */
import { existsSync, mkdirSync, readdirSync, statSync } from 'node:fs'
import { join } from 'node:path'

import { ManifestEntry, writeFeatureFile, writeManifest } from './format.js'
import { loadImage } from './image.js'
import { FeatureModel, loadModel } from './model.js'

export class DisjointnessViolation extends Error {}
export class MissingClassError extends Error {}

export interface ExportSpec {
  root: string
  model: string
  /** Ordered list of class-name groups, one group per task. */
  taskGroups: string[][]
  outDir: string
  batchSize: number
}

export interface ExportResult {
  manifestPath: string
  featureFiles: string[]
  embedDim: number
}

export function validateGroups(taskGroups: string[][], root: string): void {
  const seen = new Set<string>()
  for (const group of taskGroups) {
    for (const name of group) {
      if (seen.has(name)) {
        throw new DisjointnessViolation(
          `class ${name!} appears in more than one task group`,
        )
      }
      seen.add(name)
      const dir = join(root, name)
      if (!existsSync(dir) || !statSync(dir).isDirectory()) {
        throw new MissingClassError(`class folder ${dir} does not exist`)
      }
    }
  }
}

function classFiles(root: string, className: string): string[] {
  return readdirSync(join(root, className))
    .filter((name) => /\.(pgm|ppm)$/i.test(name))
    .sort()
    .map((name) => join(root, className, name))
}

function extract(
  model: FeatureModel,
  paths: string[],
  batchSize: number,
): Float64Array[] {
  const rows: Float64Array[] = []
  for (let start = 0; start < paths.length; start += batchSize) {
    for (const path of paths.slice(start, start + batchSize)) {
      rows.push(model.forward(loadImage(path)))
    }
  }
  return rows
}

function toPayload(rows: Float64Array[], labels: number[], dim: number) {
  const features = new Float32Array(rows.length * dim)
  rows.forEach((row, i) => features.set(Float32Array.from(row), i * dim))
  return { features, labels: Uint32Array.from(labels), dim }
}

export function exportFeatures(spec: ExportSpec): ExportResult {
  validateGroups(spec.taskGroups, spec.root)
  const model = loadModel(spec.model)
  mkdirSync(spec.outDir, { recursive: true })

  const classId = new Map<string, number>()
  for (const group of spec.taskGroups) {
    for (const name of group) classId.set(name, classId.size)
  }

  const entries: ManifestEntry[] = []
  const featureFiles: string[] = []
  spec.taskGroups.forEach((group, taskId) => {
    const split: Record<'train' | 'test', { rows: Float64Array[]; labels: number[] }> = {
      train: { rows: [], labels: [] },
      test: { rows: [], labels: [] },
    }
    for (const className of group) {
      const paths = classFiles(spec.root, className)
      const rows = extract(model, paths, spec.batchSize)
      rows.forEach((row, i) => {
        const bucket = i % 2 === 0 ? split.train : split.test
        bucket.rows.push(row)
        bucket.labels.push(classId.get(className)!)
      })
    }
    const entry: ManifestEntry = {
      task_id: taskId,
      class_ids: group.map((name) => classId.get(name)!),
      train_file: `task${taskId}_train.feat`,
      test_file: `task${taskId}_test.feat`,
    }
    for (const kind of ['train', 'test'] as const) {
      const path = join(spec.outDir, kind === 'train' ? entry.train_file : entry.test_file)
      writeFeatureFile(path, toPayload(split[kind].rows, split[kind].labels, model.embedDim))
      featureFiles.push(path)
    }
    entries.push(entry)
  })

  const manifestPath = join(spec.outDir, 'manifest.json')
  writeManifest(manifestPath, spec.outDir, entries)
  return { manifestPath, featureFiles, embedDim: model.embedDim }
}
