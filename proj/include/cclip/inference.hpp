#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cclip/alignment.hpp"
#include "cclip/dataset.hpp"

namespace cclip {

inline constexpr const char* kDefaultPromptTemplate = "A realistic photo of a {CLS}";

// One prompt per class, rendered from a template with a single {CLS} slot.
struct PromptSet {
    std::vector<std::string> classes; // unique, order fixed
    std::string template_text = kDefaultPromptTemplate;

    static PromptSet make(std::vector<std::string> classes,
                          std::string template_text = kDefaultPromptTemplate);

    std::string render(const std::string& class_name) const;
    std::vector<std::string> rendered() const;
    // Index of a class name, or npos.
    std::size_t class_index(const std::string& name) const;
};

enum class Modality { image, text };

std::string modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Frozen normalized embeddings queried by cosine similarity. Rows are sorted
// by ascending record id and are immutable once built.
struct RetrievalIndex {
    std::vector<std::string> ids;
    Matrix embeddings; // N x joint, unit rows
    Modality modality = Modality::image;

    std::size_t size() const { return ids.size(); }
};

// Per-dataset top-1 accuracies (percent). Averages are always recomputed
// from the rows; nothing is stored redundantly.
struct EvalReport {
    std::vector<std::pair<std::string, double>> rows;
    std::vector<std::string> ood_names;

    double ood_average() const;
    double overall_average() const;
};

// Probability rule for zero-shot prediction: softmax over scaled cosines
// (default) or the literal ratio s_i / sum_j s_j, which requires every scaled
// similarity to be positive. Both rules rank classes identically.
enum class ProbabilityRule { softmax, literal };

// Normalized joint-space embeddings for raw image feature rows / text strings.
Matrix embed_images(const AlignmentModel& model, const Matrix& image_inputs);
Matrix embed_texts(const AlignmentModel& model, const std::vector<std::string>& texts);

Matrix prompt_embeddings(const AlignmentModel& model, const PromptSet& prompts);

// Probability over classes for one image input; sums to 1. Predicted class
// is the argmax with ties broken by the lowest class index.
std::vector<double> zero_shot_predict(const AlignmentModel& model,
                                      std::span<const double> image_input,
                                      const PromptSet& prompts,
                                      ProbabilityRule rule = ProbabilityRule::softmax);

std::size_t argmax(std::span<const double> values);

// Percent of records whose predicted class matches the label (full precision;
// callers format to 2 decimals). Asserts softmax/literal argmax agreement on
// every record whose scaled similarities are all positive.
double top1_accuracy(const AlignmentModel& model, const std::vector<PairRecord>& records,
                     const PromptSet& prompts, FeatureStore& store);

EvalReport aggregate_report(const std::vector<std::pair<std::string, double>>& named_accuracies,
                            const std::vector<std::string>& ood_names);

// Wide text table mirroring the usual report layout: one column per dataset
// plus OOD Average and Average.
std::string render_report_table(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

RetrievalIndex build_index(const AlignmentModel& model, const std::vector<PairRecord>& records,
                           Modality modality, FeatureStore& store);

struct RetrievalHit {
    std::string id;
    double cosine = 0.0;
};

// Exact brute-force top-k by cosine, descending, ties by ascending id.
// The query row must be unit-norm joint-space. KTooLarge if k is 0 or
// exceeds the (possibly self-excluded) candidate count.
std::vector<RetrievalHit> retrieve(const Matrix& query_embedding, const RetrievalIndex& index,
                                   std::size_t k, const std::string& exclude_id = "");

// Convenience wrappers per query modality; a bare class name is rendered
// through the prompt template, any other text is embedded verbatim.
std::vector<RetrievalHit> retrieve_text(const AlignmentModel& model, const std::string& query,
                                        const PromptSet& prompts, const RetrievalIndex& index,
                                        std::size_t k);
std::vector<RetrievalHit> retrieve_image(const AlignmentModel& model,
                                         std::span<const double> image_input,
                                         const RetrievalIndex& index, std::size_t k,
                                         const std::string& exclude_id = "");

// Mean over queries of the mean cosine of each query's top-k hits, x100.
// query_ids may be empty; when exclude_self is set it must align with the
// query rows so each query can skip its own index entry.
double avg_topk_cosine(const Matrix& queries, const std::vector<std::string>& query_ids,
                       const RetrievalIndex& index, std::size_t k, bool exclude_self = false);

// TSV export of joint-space image embeddings:
// header "id<TAB>label<TAB>e0..e{n-1}", 9 significant digits per value.
void export_embeddings(const AlignmentModel& model, const std::vector<PairRecord>& records,
                       FeatureStore& store, const std::filesystem::path& path);

// Display rounding used by reports and retrieval scores (half-up, 2 decimals).
double round_half_up_2dp(double value);
std::string format_2dp(double value);

} // namespace cclip
