#include "cclip/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace cclip {

using ordered_json = nlohmann::ordered_json;

PromptSet PromptSet::make(std::vector<std::string> classes, std::string template_text) {
    require(!classes.empty(), "InvalidArgument", "prompt set needs at least one class");
    std::set<std::string> unique(classes.begin(), classes.end());
    require(unique.size() == classes.size(), "DuplicateId", "class names must be unique");

    const auto pos = template_text.find("{CLS}");
    require(pos != std::string::npos, "InvalidArgument",
            "prompt template lacks a {CLS} placeholder");
    require(template_text.find("{CLS}", pos + 1) == std::string::npos, "InvalidArgument",
            "prompt template must contain exactly one {CLS} placeholder");

    PromptSet p;
    p.classes = std::move(classes);
    p.template_text = std::move(template_text);
    return p;
}

std::string PromptSet::render(const std::string& class_name) const {
    std::string out = template_text;
    out.replace(out.find("{CLS}"), 5, class_name);
    return out;
}

std::vector<std::string> PromptSet::rendered() const {
    std::vector<std::string> out;
    out.reserve(classes.size());
    for (const auto& c : classes) {
        out.push_back(render(c));
    }
    return out;
}

std::size_t PromptSet::class_index(const std::string& name) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] == name) {
            return i;
        }
    }
    return std::string::npos;
}

std::string modality_name(Modality m) { return m == Modality::image ? "image" : "text"; }

Modality modality_from_name(const std::string& name) {
    if (name == "image") return Modality::image;
    if (name == "text") return Modality::text;
    fail("ParseError", "unknown modality '" + name + "'");
}

Matrix embed_images(const AlignmentModel& model, const Matrix& image_inputs) {
    const ImageForward fwd = encode_image(model.image, image_inputs);
    return l2_normalize_rows(matmul(fwd.out, model.wv));
}

Matrix embed_texts(const AlignmentModel& model, const std::vector<std::string>& texts) {
    std::vector<std::vector<std::int32_t>> sequences;
    sequences.reserve(texts.size());
    for (const auto& t : texts) {
        sequences.push_back(tokenize(t, model.vocab));
    }
    return l2_normalize_rows(matmul(encode_text(model.text, sequences), model.wt));
}

Matrix prompt_embeddings(const AlignmentModel& model, const PromptSet& prompts) {
    return embed_texts(model, prompts.rendered());
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

namespace {

// Scaled cosine scores of one image row against every class prompt.
std::vector<double> class_scores(const AlignmentModel& model,
                                 std::span<const double> image_input,
                                 const Matrix& prompt_emb) {
    Matrix one(1, image_input.size());
    std::copy(image_input.begin(), image_input.end(), one.data.begin());
    const Matrix img = embed_images(model, one);
    const Matrix logits = similarity_logits(img, prompt_emb, model.tau(0, 0));
    return {logits.data.begin(), logits.data.end()};
}

std::vector<double> scores_to_probs(const std::vector<double>& scores, ProbabilityRule rule) {
    if (rule == ProbabilityRule::softmax) {
        Matrix row(1, scores.size());
        std::copy(scores.begin(), scores.end(), row.data.begin());
        const Matrix probs = softmax_rows(row);
        return {probs.data.begin(), probs.data.end()};
    }
    double sum = 0.0;
    for (const double s : scores) {
        require(s > 0.0, "NegativeSimilarity",
                "the literal probability rule needs every scaled similarity positive");
        sum += s;
    }
    std::vector<double> probs(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        probs[i] = scores[i] / sum;
    }
    return probs;
}

} // namespace

std::vector<double> zero_shot_predict(const AlignmentModel& model,
                                      std::span<const double> image_input,
                                      const PromptSet& prompts, ProbabilityRule rule) {
    const Matrix prompt_emb = prompt_embeddings(model, prompts);
    return scores_to_probs(class_scores(model, image_input, prompt_emb), rule);
}

double top1_accuracy(const AlignmentModel& model, const std::vector<PairRecord>& records,
                     const PromptSet& prompts, FeatureStore& store) {
    require(!records.empty(), "InvalidArgument", "no records to evaluate");
    const Matrix prompt_emb = prompt_embeddings(model, prompts);

    std::size_t correct = 0;
    for (const auto& rec : records) {
        const std::size_t label_idx = prompts.class_index(rec.label);
        if (label_idx == std::string::npos) {
            fail("UnknownLabel",
                 "record '" + rec.id + "' has label '" + rec.label + "' outside the prompt set");
        }
        const std::vector<double> row = store.feature_row(rec);
        const std::vector<double> scores = class_scores(model, row, prompt_emb);
        const std::size_t pred = argmax(scores);

        // Softmax and the literal rule are both monotone in the cosine, so
        // their argmax must agree whenever the literal rule is defined.
        if (std::all_of(scores.begin(), scores.end(), [](double s) { return s > 0.0; })) {
            const auto literal = scores_to_probs(scores, ProbabilityRule::literal);
            require(argmax(literal) == pred, "ArgmaxMismatch",
                    "softmax and literal normalization disagreed on record '" + rec.id + "'");
        }
        if (pred == label_idx) {
            ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

double EvalReport::ood_average() const {
    require(!ood_names.empty(), "InvalidArgument", "no OOD datasets named");
    double sum = 0.0;
    for (const auto& name : ood_names) {
        const auto it = std::find_if(rows.begin(), rows.end(),
                                     [&](const auto& r) { return r.first == name; });
        require(it != rows.end(), "UnknownDatasetName", "no accuracy row named '" + name + "'");
        sum += it->second;
    }
    return sum / static_cast<double>(ood_names.size());
}

double EvalReport::overall_average() const {
    require(!rows.empty(), "InvalidArgument", "empty report");
    double sum = 0.0;
    for (const auto& [name, acc] : rows) {
        sum += acc;
    }
    return sum / static_cast<double>(rows.size());
}

EvalReport aggregate_report(const std::vector<std::pair<std::string, double>>& named_accuracies,
                            const std::vector<std::string>& ood_names) {
    EvalReport report;
    report.rows = named_accuracies;
    std::set<std::string> seen;
    for (const auto& [name, acc] : report.rows) {
        require(seen.insert(name).second, "DuplicateId", "dataset '" + name + "' listed twice");
    }
    for (const auto& name : ood_names) {
        require(seen.count(name) == 1, "UnknownDatasetName",
                "OOD name '" + name + "' is not among the provided datasets");
    }
    report.ood_names = ood_names;
    if (!report.ood_names.empty()) {
        report.ood_average(); // validates now rather than at print time
    }
    return report;
}

double round_half_up_2dp(double value) {
    if (value >= 0.0) {
        return std::floor(value * 100.0 + 0.5) / 100.0;
    }
    return std::ceil(value * 100.0 - 0.5) / 100.0;
}

std::string format_2dp(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", round_half_up_2dp(value));
    return buf;
}

std::string render_report_table(const EvalReport& report) {
    std::vector<std::pair<std::string, std::string>> columns;
    for (const auto& [name, acc] : report.rows) {
        columns.emplace_back(name, format_2dp(acc));
    }
    if (!report.ood_names.empty()) {
        columns.emplace_back("OOD Average", format_2dp(report.ood_average()));
    }
    columns.emplace_back("Average", format_2dp(report.overall_average()));

    std::ostringstream head;
    std::ostringstream vals;
    for (const auto& [name, value] : columns) {
        const std::size_t width = std::max(name.size(), value.size()) + 2;
        head << name << std::string(width - name.size(), ' ');
        vals << value << std::string(width - value.size(), ' ');
    }
    std::string h = head.str();
    std::string v = vals.str();
    while (!h.empty() && h.back() == ' ') h.pop_back();
    while (!v.empty() && v.back() == ' ') v.pop_back();
    return h + "\n" + v + "\n";
}

std::string report_to_json(const EvalReport& report) {
    ordered_json j;
    j["datasets"] = ordered_json::array();
    for (const auto& [name, acc] : report.rows) {
        j["datasets"].push_back({{"name", name}, {"top1", acc}});
    }
    j["ood"] = report.ood_names;
    if (!report.ood_names.empty()) {
        j["ood_average"] = report.ood_average();
    }
    j["overall_average"] = report.overall_average();
    return j.dump(2) + "\n";
}

RetrievalIndex build_index(const AlignmentModel& model, const std::vector<PairRecord>& records,
                           Modality modality, FeatureStore& store) {
    require(!records.empty(), "InvalidArgument", "cannot index zero records");

    std::vector<const PairRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& rec : records) {
        sorted.push_back(&rec);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const PairRecord* a, const PairRecord* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        require(sorted[i]->id != sorted[i - 1]->id, "DuplicateId",
                "record id '" + sorted[i]->id + "' repeats");
    }

    RetrievalIndex index;
    index.modality = modality;
    for (const auto* rec : sorted) {
        index.ids.push_back(rec->id);
    }

    if (modality == Modality::image) {
        Matrix inputs;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            const std::vector<double> row = store.feature_row(*sorted[i]);
            if (i == 0) {
                inputs = Matrix(sorted.size(), row.size());
            }
            require(row.size() == inputs.cols, "DimMismatch",
                    "feature dimensions differ across records");
            std::copy(row.begin(), row.end(), inputs.row(i).begin());
        }
        index.embeddings = embed_images(model, inputs);
    } else {
        std::vector<std::string> captions;
        for (const auto* rec : sorted) {
            require(!rec->caption.empty(), "EmptyCaption",
                    "record '" + rec->id + "' has no caption to index");
            captions.push_back(rec->caption);
        }
        index.embeddings = embed_texts(model, captions);
    }
    return index;
}

std::vector<RetrievalHit> retrieve(const Matrix& query_embedding, const RetrievalIndex& index,
                                   std::size_t k, const std::string& exclude_id) {
    require(query_embedding.rows == 1 && query_embedding.cols == index.embeddings.cols,
            "DimMismatch", "query embedding shape differs from the index");

    std::vector<RetrievalHit> hits;
    hits.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (!exclude_id.empty() && index.ids[i] == exclude_id) {
            continue;
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < query_embedding.cols; ++j) {
            dot += query_embedding(0, j) * index.embeddings(i, j);
        }
        hits.push_back({index.ids[i], dot});
    }
    if (k < 1 || k > hits.size()) {
        fail("KTooLarge", "k=" + std::to_string(k) + " with " + std::to_string(hits.size()) +
                              " candidates");
    }
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.cosine != b.cosine) {
            return a.cosine > b.cosine;
        }
        return a.id < b.id;
    });
    hits.resize(k);
    return hits;
}

std::vector<RetrievalHit> retrieve_text(const AlignmentModel& model, const std::string& query,
                                        const PromptSet& prompts, const RetrievalIndex& index,
                                        std::size_t k) {
    const std::string text =
        prompts.class_index(query) != std::string::npos ? prompts.render(query) : query;
    return retrieve(embed_texts(model, {text}), index, k);
}

std::vector<RetrievalHit> retrieve_image(const AlignmentModel& model,
                                         std::span<const double> image_input,
                                         const RetrievalIndex& index, std::size_t k,
                                         const std::string& exclude_id) {
    Matrix one(1, image_input.size());
    std::copy(image_input.begin(), image_input.end(), one.data.begin());
    return retrieve(embed_images(model, one), index, k, exclude_id);
}

double avg_topk_cosine(const Matrix& queries, const std::vector<std::string>& query_ids,
                       const RetrievalIndex& index, std::size_t k, bool exclude_self) {
    require(queries.rows > 0, "InvalidArgument", "no queries");
    require(!exclude_self || query_ids.size() == queries.rows, "InvalidArgument",
            "exclude_self needs one id per query row");

    double total = 0.0;
    for (std::size_t q = 0; q < queries.rows; ++q) {
        Matrix row(1, queries.cols);
        std::copy(queries.row(q).begin(), queries.row(q).end(), row.data.begin());
        const std::string exclude = exclude_self ? query_ids[q] : std::string();
        const auto hits = retrieve(row, index, k, exclude);
        double mean = 0.0;
        for (const auto& hit : hits) {
            mean += hit.cosine;
        }
        total += mean / static_cast<double>(hits.size());
    }
    return 100.0 * total / static_cast<double>(queries.rows);
}

void export_embeddings(const AlignmentModel& model, const std::vector<PairRecord>& records,
                       FeatureStore& store, const std::filesystem::path& path) {
    const std::size_t joint = model.wv.cols;

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IoError", "cannot write " + path.string());
    out << "id\tlabel";
    for (std::size_t j = 0; j < joint; ++j) {
        out << "\te" << j;
    }
    out << '\n';

    for (const auto& rec : records) {
        const std::vector<double> row = store.feature_row(rec);
        Matrix one(1, row.size());
        std::copy(row.begin(), row.end(), one.data.begin());
        const Matrix emb = embed_images(model, one);
        out << rec.id << '\t' << rec.label;
        char buf[64];
        for (std::size_t j = 0; j < joint; ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", emb(0, j));
            out << '\t' << buf;
        }
        out << '\n';
    }
    require(out.good(), "IoError", "failed writing " + path.string());
}

} // namespace cclip
