#!/usr/bin/env node
/** `foro-export`: image folder -> FOROFEAT feature files + manifest. */
import { readFileSync } from 'node:fs'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { DisjointnessViolation, MissingClassError, exportFeatures } from './export.js'
import { ImageDecodeError } from './image.js'
import { ModelLoadError, availableModels } from './model.js'

function parseTaskGroups(path: string): string[][] {
  const doc = JSON.parse(readFileSync(path, 'utf8'))
  const groups = Array.isArray(doc) ? doc : doc.tasks
  if (
    !Array.isArray(groups) ||
    !groups.every(
      (g: unknown) =>
        Array.isArray(g) && g.length > 0 && g.every((c) => typeof c === 'string'),
    )
  ) {
    throw new Error(`${path}: expected {"tasks": [["classA", ...], ...]}`)
  }
  return groups
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName('foro-export')
    .usage('$0 --root DIR --model NAME --tasks tasks.json --out DIR [--batch N]')
    .option('root', { type: 'string', demandOption: true, describe: 'image root (class-per-subfolder)' })
    .option('model', { type: 'string', demandOption: true, describe: `feature model (${availableModels().join(', ')})` })
    .option('tasks', { type: 'string', demandOption: true, describe: 'task partition JSON' })
    .option('out', { type: 'string', demandOption: true, describe: 'output directory' })
    .option('batch', { type: 'number', default: 32, describe: 'inference batch size' })
    .strict()
    .help()
    .parse()

  try {
    const result = exportFeatures({
      root: args.root,
      model: args.model,
      taskGroups: parseTaskGroups(args.tasks),
      outDir: args.out,
      batchSize: Math.max(1, args.batch),
    })
    console.log(
      `wrote ${result.featureFiles.length} feature files (d=${result.embedDim}) ` +
        `and ${result.manifestPath}`,
    )
    return 0
  } catch (err) {
    if (
      err instanceof DisjointnessViolation ||
      err instanceof MissingClassError ||
      err instanceof SyntaxError
    ) {
      console.error(`invalid export spec: ${(err as Error).message}`)
      return 2
    }
    if (err instanceof ModelLoadError || err instanceof ImageDecodeError) {
      console.error(`export failed: ${err.message}`)
      return 1
    }
    throw err
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code
  })
}
