import io
import json

from squad_to_jsonl import answer_span, convert, tokens_from_annotation


def annotate(text):
    tokens, pos = [], 0
    for word in text.split():
        begin = text.index(word, pos)
        pos = begin + len(word)
        tokens.append(
            {
                "word": word,
                "lemma": word.lower(),
                "pos": "NNP" if word[0].isupper() else "NN",
                "ner": "O",
                "characterOffsetBegin": begin,
                "characterOffsetEnd": pos,
            }
        )
    return {"text": text, "sentences": [{"tokens": tokens}]}


CONTEXT = "The United Kingdom intends to withdraw from the European Union ."
QUESTION = "Which country withdraws ?"
SQUAD = {
    "data": [
        {
            "paragraphs": [
                {
                    "context": CONTEXT,
                    "qas": [
                        {
                            "id": "q1",
                            "question": QUESTION,
                            "answers": [
                                {"answer_start": 4, "text": "United Kingdom"},
                                {"answer_start": 4, "text": "United Kingdom"},
                                {"answer_start": 5, "text": "nited"},
                            ],
                        },
                        {"id": "q2", "question": "Unannotated ?", "answers": []},
                    ],
                }
            ]
        }
    ]
}


def test_answer_span_maps_characters_to_tokens():
    tokens = tokens_from_annotation(annotate(CONTEXT))
    assert answer_span(tokens, 4, "United Kingdom") == {"start": 2, "end": 3, "text": "United Kingdom"}
    assert answer_span(tokens, 5, "nited") is None
    assert answer_span(tokens, 500, "x") is None


def test_convert_writes_schema_and_counts():
    annotations = {t: tokens_from_annotation(annotate(t)) for t in (CONTEXT, QUESTION)}
    out, err = io.StringIO(), io.StringIO()
    stats = convert(SQUAD, annotations, out, err)
    lines = out.getvalue().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["id"] == "q1"
    assert record["answers"] == [{"start": 2, "end": 3, "text": "United Kingdom"}]
    assert set(record["passage"][0]) == {"surface", "lemma", "pos", "ne", "offset"}
    assert stats == {"questions": 2, "written": 1, "unannotated": 1, "answers_dropped": 1, "no_answer": 0}
