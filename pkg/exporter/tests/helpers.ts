import { mkdirSync, writeFileSync } from 'node:fs'
import { join } from 'node:path'

/** Deterministic 24x24 binary PGM with a class-dependent pattern. */
export function writeToyImage(path: string, classIdx: number, sample: number): void {
  const side = 24
  const pixels = Buffer.alloc(side * side)
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      const wave =
        128 +
        96 * Math.sin((x * (classIdx + 1)) / 3 + sample) *
          Math.cos((y * (classIdx + 2)) / 4)
      pixels[y * side + x] = Math.max(0, Math.min(255, Math.round(wave)))
    }
  }
  writeFileSync(path, Buffer.concat([Buffer.from(`P5\n${side} ${side}\n255\n`), pixels]))
}

export function writeToyFolder(
  root: string,
  classNames: string[],
  perClass: number,
): void {
  classNames.forEach((name, classIdx) => {
    const dir = join(root, name)
    mkdirSync(dir, { recursive: true })
    for (let sample = 0; sample < perClass; sample++) {
      writeToyImage(join(dir, `img${String(sample).padStart(3, '0')}.pgm`), classIdx, sample)
    }
  })
}
