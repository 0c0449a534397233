#!/usr/bin/env python3
"""Convert SQuAD-format JSON plus token annotations into the dcr JSONL schema.

Annotation is external. Two steps:

    # 1. list every passage and question text, one JSON string per line
    squad_to_jsonl.py texts dev-v1.1.json > texts.jsonl

    # 2. annotate each text (e.g. with CoreNLP, json output), then write one
    #    line per text: {"text": ..., "sentences": [{"tokens": [...]}]}
    #    where each token has word, lemma, pos, ner, characterOffsetBegin,
    #    characterOffsetEnd (the CoreNLP field names)
    squad_to_jsonl.py convert dev-v1.1.json annotations.jsonl > dev.jsonl

Answers are mapped to the tokens their character range overlaps. An answer
whose token span does not reproduce its text (ignoring whitespace) is dropped;
a question left without answers is skipped. Counts go to stderr.
"""

import argparse
import json
import sys


def iter_questions(squad):
    for article in squad["data"]:
        for para in article["paragraphs"]:
            for qa in para["qas"]:
                yield para["context"], qa


def squeeze(text):
    return "".join(text.split())


def tokens_from_annotation(doc):
    out = []
    for sentence in doc["sentences"]:
        for t in sentence["tokens"]:
            out.append(
                {
                    "surface": t["word"],
                    "lemma": t.get("lemma", t["word"]),
                    "pos": t.get("pos", "O"),
                    "ne": t.get("ner", "O"),
                    "offset": t["characterOffsetBegin"],
                    "_end": t["characterOffsetEnd"],
                }
            )
    return out


def answer_span(tokens, start_char, text):
    """1-based inclusive token span covering [start_char, start_char+len(text))."""
    end_char = start_char + len(text)
    covered = [i for i, t in enumerate(tokens) if t["_end"] > start_char and t["offset"] < end_char]
    if not covered:
        return None
    start, end = covered[0] + 1, covered[-1] + 1
    surfaces = "".join(t["surface"] for t in tokens[start - 1 : end])
    if squeeze(surfaces) != squeeze(text):
        return None
    return {"start": start, "end": end, "text": text}


def public(tokens):
    return [{k: v for k, v in t.items() if not k.startswith("_")} for t in tokens]


def convert(squad, annotations, out, err):
    stats = {"questions": 0, "written": 0, "unannotated": 0, "answers_dropped": 0, "no_answer": 0}
    for context, qa in iter_questions(squad):
        stats["questions"] += 1
        if context not in annotations or qa["question"] not in annotations:
            stats["unannotated"] += 1
            continue
        passage = annotations[context]
        answers = []
        for a in qa.get("answers", []):
            span = answer_span(passage, a["answer_start"], a["text"])
            if span is None:
                stats["answers_dropped"] += 1
            elif span not in answers:
                answers.append(span)
        if not answers:
            stats["no_answer"] += 1
            continue
        record = {
            "id": qa["id"],
            "passage": public(passage),
            "question": public(annotations[qa["question"]]),
            "answers": answers,
        }
        out.write(json.dumps(record, ensure_ascii=False) + "\n")
        stats["written"] += 1
    err.write(" ".join(f"{k}={v}" for k, v in stats.items()) + "\n")
    return stats


def load_annotations(path):
    table = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                doc = json.loads(line)
                table[doc["text"]] = tokens_from_annotation(doc)
    return table


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    texts = sub.add_parser("texts", help="list unique passage and question texts")
    texts.add_argument("squad")
    conv = sub.add_parser("convert", help="write dcr JSONL")
    conv.add_argument("squad")
    conv.add_argument("annotations")
    args = parser.parse_args(argv)

    with open(args.squad, encoding="utf-8") as f:
        squad = json.load(f)
    if args.command == "texts":
        seen = set()
        for context, qa in iter_questions(squad):
            for text in (context, qa["question"]):
                if text not in seen:
                    seen.add(text)
                    sys.stdout.write(json.dumps(text, ensure_ascii=False) + "\n")
        return 0
    convert(squad, load_annotations(args.annotations), sys.stdout, sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
